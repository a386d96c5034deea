import pytest
from hypothesis import given
from hypothesis import strategies as st

from stasc.core import (
    ALL_VARIANT_CODES,
    FilterMode,
    FinetuneMode,
    InitMode,
    QAItem,
    Trajectory,
    VariantConfig,
    format_variant_code,
    parse_variant_code,
    resolve_variant_name,
)
from stasc.errors import ConfigurationError, StateIntegrityError
from stasc.state import IterationRecord, RunState, resolve_models


class TestVariantCodes:
    def test_eif(self):
        assert parse_variant_code("EIF") == (
            InitMode.EVOLVING,
            FilterMode.IMPROVING,
            FinetuneMode.FIXED,
        )

    def test_fif(self):
        assert parse_variant_code("FIF") == (
            InitMode.FIXED,
            FilterMode.IMPROVING,
            FinetuneMode.FIXED,
        )

    def test_case_insensitive(self):
        assert parse_variant_code("enE") == parse_variant_code("ENE")

    def test_bad_first_char_names_position(self):
        with pytest.raises(ConfigurationError, match="character 1"):
            parse_variant_code("XIF")

    def test_bad_middle_char_names_position(self):
        with pytest.raises(ConfigurationError, match="character 2"):
            parse_variant_code("EFF")

    def test_bad_length(self):
        with pytest.raises(ConfigurationError, match="3 letters"):
            parse_variant_code("EIFF")

    def test_round_trip_all_eight(self):
        assert len(ALL_VARIANT_CODES) == 8
        for code in ALL_VARIANT_CODES:
            assert format_variant_code(*parse_variant_code(code)) == code

    def test_presets(self):
        assert resolve_variant_name("sc") == "FIE"
        assert resolve_variant_name("star") == "EIF"
        assert resolve_variant_name("fne") == "FNE"


class TestVariantConfig:
    def test_code_property(self):
        cfg = VariantConfig().with_code("FNE")
        assert cfg.code == "FNE"

    def test_validate_sizes(self):
        cfg = VariantConfig(iterations=0, n_init=0, n_corr=0)
        problems = cfg.validate()
        assert any("iterations" in p for p in problems)
        assert any("n_init" in p for p in problems)
        assert any("n_corr" in p for p in problems)

    def test_validate_sampling(self):
        from stasc.core import SamplingParams

        cfg = VariantConfig(sampling=SamplingParams(temperature=-1, top_p=0.0, max_tokens=0))
        problems = cfg.validate()
        assert len(problems) == 3


def _state(code: str, produced: list[str]) -> RunState:
    state = RunState(run_id="r", seed=0, base_model="m0", config={"variant": code})
    for n, model in enumerate(produced, start=1):
        rec = IterationRecord(
            n=n, generator="m0", corrector="m0", finetune_base="m0", produced_model=model
        )
        state.add_record(rec)
    return state


class TestResolveModels:
    def test_n1_collapses_to_base(self):
        # All roles resolve to M_0 at the first iteration for any variant.
        for code in ALL_VARIANT_CODES:
            assert resolve_models(_state(code, []), 1) == ("m0", "m0", "m0")

    def test_fie_n3(self):
        state = _state("FIE", ["m1", "m2"])
        assert resolve_models(state, 3) == ("m0", "m2", "m2")

    def test_ene_n2(self):
        state = _state("ENE", ["m1"])
        assert resolve_models(state, 2) == ("m1", "m1", "m1")

    def test_corrector_always_previous(self):
        for code in ALL_VARIANT_CODES:
            state = _state(code, ["mA", "mB"])
            _, corrector, _ = resolve_models(state, 3)
            assert corrector == "mB"

    def test_missing_predecessor(self):
        state = _state("EIF", ["m1"])
        state.iterations[0].produced_model = None
        with pytest.raises(StateIntegrityError):
            resolve_models(state, 2)

    def test_bad_iteration_index(self):
        with pytest.raises(StateIntegrityError):
            resolve_models(_state("EIF", []), 0)


class TestRunState:
    def test_contiguous_records_enforced(self):
        state = _state("EIF", [])
        with pytest.raises(StateIntegrityError):
            state.add_record(
                IterationRecord(n=2, generator="m0", corrector="m0", finetune_base="m0")
            )

    def test_known_model_ids(self):
        state = _state("EIF", ["m0+ft1", "m0+ft2"])
        assert state.known_model_ids() == {"m0", "m0+ft1", "m0+ft2"}

    @given(
        st.integers(min_value=0, max_value=2**31 - 1),
        st.lists(
            st.sampled_from(["pending", "done", "failed"]), min_size=0, max_size=1
        ),
        st.lists(st.text(alphabet="abc+ft123", min_size=1, max_size=8), max_size=4),
    )
    def test_serialization_round_trip(self, seed, statuses, produced):
        state = RunState(
            run_id="run-x",
            seed=seed,
            base_model="m0",
            config={"variant": "EIF", "anything": [1, 2, {"k": None}]},
            status=statuses[0] if statuses else "pending",
        )
        for n, model in enumerate(produced, start=1):
            state.add_record(
                IterationRecord(
                    n=n,
                    generator="m0",
                    corrector="m0",
                    finetune_base="m0",
                    produced_model=model,
                    trained=True,
                    counts={"selected": n},
                    warnings=["w"] if n % 2 else [],
                )
            )
        assert RunState.from_json(state.to_json()) == state


class TestDomainTypes:
    def test_qaitem_rejects_empty_question(self):
        with pytest.raises(ConfigurationError):
            QAItem(id="a", question="   ", references=("x",))

    def test_qaitem_rejects_no_references(self):
        with pytest.raises(ConfigurationError):
            QAItem(id="a", question="Q?", references=())

    def test_trajectory_reward_bounds(self):
        from tests.conftest import make_items
        from stasc.core import AnswerSample, CorrectionSample

        item = make_items(1)[0]
        initial = AnswerSample(item.id, 0, "raw", None, "m0", "sha")
        correction = CorrectionSample(item.id, 0, 0, "raw", None, "m0", "sha")
        with pytest.raises(ConfigurationError):
            Trajectory(item, initial, correction, reward_initial=1.5, reward_correction=0.0)
