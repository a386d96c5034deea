"""Builds a self-contained tiny checkpoint for desk-scale end-to-end runs.

The model is a small GPT-2 trained from scratch on a synthetic QA corpus with
two block shapes. Plain question blocks answer with a color that depends on
the thing being asked about; revision blocks (an "Initial Answer:" slot
followed by a revision instruction) always answer "blue", a word excluded
from plain answers. A served checkpoint therefore gives wrong-then-corrected
behavior out of the box: sample an initial answer (never "blue"), ask for a
revision ("blue"), and score against the reference "blue".

The prompt bodies the corpus was trained on are exported so callers can drive
the model in distribution.
"""
from __future__ import annotations

import logging
import random
from pathlib import Path

import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

logger = logging.getLogger(__name__)

EOS = "<|endoftext|>"
ANSWER_MARKER = "Final Answer:"
CORRECTION_WORD = "blue"
PLAIN_WORD = "red"

INITIAL_PROMPT_BODY = "Question: {question}\nAnswer the question.\n"
CORRECTION_PROMPT_BODY = (
    "Question: {question}\nInitial Answer: {initial_answer}\nPlease revise the answer above.\n"
)

# Front-matter template files matching the corpus, for orchestrators that
# render prompts from template files.
INITIAL_TEMPLATE_FILE = f"kind: initial\nmarker: {ANSWER_MARKER}\n---\n{INITIAL_PROMPT_BODY}"
CORRECTION_TEMPLATE_FILE = (
    f"kind: correction\nmarker: {ANSWER_MARKER}\n---\n{CORRECTION_PROMPT_BODY}"
)

_ADJECTIVES = ("old", "small", "bright", "heavy", "quiet", "round", "broken", "warm")
_NOUNS = ("kettle", "lantern", "wheel", "ribbon", "marble", "anchor", "basket", "prism")


def _names(rng: random.Random, count: int) -> list[str]:
    names = [f"object-{i}" for i in range(count // 2)]
    while len(names) < count:
        names.append(f"the {rng.choice(_ADJECTIVES)} {rng.choice(_NOUNS)} {len(names)}")
    rng.shuffle(names)
    return names


def _initial_completion() -> str:
    return f"Step-by-step reasoning: I recall it clearly.\n{ANSWER_MARKER} {PLAIN_WORD}\n"


def _correction_completion() -> str:
    return (
        "Step-by-step reasoning: The first answer was not right.\n"
        f"{ANSWER_MARKER} {CORRECTION_WORD}\n"
    )


def corpus_names(seed: int, count: int = 300) -> list[str]:
    return _names(random.Random(seed), count)


def demo_questions(seed: int = 0, count: int = 24) -> list[str]:
    """Questions the checkpoint was trained on; ideal for deterministic demos."""
    return [f"What is the color of {name}?" for name in corpus_names(seed)[:count]]


def build_corpus(seed: int, count: int = 300) -> list[str]:
    """Both block shapes for every name, with constant completions.

    Plain answers never use the correction word, so a served model answers
    PLAIN_WORD to these questions and CORRECTION_WORD after a revision
    instruction, which is the wrong-then-corrected shape downstream consumers
    want out of a demo checkpoint. ``demo_questions`` returns questions from
    this corpus.
    """
    out = []
    for name in corpus_names(seed, count):
        question = f"What is the color of {name}?"
        prompt = INITIAL_PROMPT_BODY.replace("{question}", question)
        out.append(prompt + _initial_completion())
        initial_raw = _initial_completion()
        prompt = CORRECTION_PROMPT_BODY.replace("{question}", question).replace(
            "{initial_answer}", initial_raw
        )
        out.append(prompt + _correction_completion())
    return out


def _build_tokenizer(corpus: list[str], vocab_size: int) -> PreTrainedTokenizerFast:
    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=vocab_size,
        special_tokens=[EOS],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tok.train_from_iterator(corpus, trainer)
    return PreTrainedTokenizerFast(tokenizer_object=tok, eos_token=EOS, pad_token=EOS)


def _encode_blocks(tokenizer, corpus: list[str]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """One padded row per block, each starting at position 0 like a prompt does."""
    rows = [tokenizer(block)["input_ids"] + [tokenizer.eos_token_id] for block in corpus]
    width = max(len(r) for r in rows)
    pad = tokenizer.eos_token_id
    input_ids = torch.full((len(rows), width), pad, dtype=torch.long)
    labels = torch.full((len(rows), width), -100, dtype=torch.long)
    attention = torch.zeros((len(rows), width), dtype=torch.long)
    for i, row in enumerate(rows):
        input_ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        labels[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        attention[i, : len(row)] = 1
    return input_ids, labels, attention


def _self_check(model, tokenizer, seed: int) -> bool:
    """Greedy rollouts on demo questions must show the trained behavior."""
    model.eval()
    questions = demo_questions(seed)
    for question in questions[::5] + [questions[-1]]:
        initial_prompt = INITIAL_PROMPT_BODY.replace("{question}", question)
        initial_out = greedy_complete(model, tokenizer, initial_prompt)
        initial_word = extract_answer(initial_out)
        correction_prompt = CORRECTION_PROMPT_BODY.replace("{question}", question).replace(
            "{initial_answer}", initial_out.strip() + "\n"
        )
        correction_word = extract_answer(greedy_complete(model, tokenizer, correction_prompt))
        ok = (
            initial_word is not None
            and CORRECTION_WORD not in initial_word
            and correction_word is not None
            and CORRECTION_WORD in correction_word
        )
        logger.info(
            "self-check %r: initial=%r correction=%r ok=%s",
            question,
            initial_word,
            correction_word,
            ok,
        )
        if not ok:
            return False
    return True


def greedy_complete(model, tokenizer, prompt: str, max_new_tokens: int = 48) -> str:
    ids = tokenizer(prompt, return_tensors="pt").input_ids
    with torch.no_grad():
        out = model.generate(
            ids,
            max_new_tokens=max_new_tokens,
            do_sample=False,
            pad_token_id=tokenizer.eos_token_id,
            eos_token_id=tokenizer.eos_token_id,
        )
    return tokenizer.decode(out[0][ids.shape[1]:], skip_special_tokens=True)


def extract_answer(text: str) -> str | None:
    idx = text.rfind(ANSWER_MARKER)
    if idx < 0:
        return None
    lines = text[idx + len(ANSWER_MARKER):].strip().splitlines()
    return lines[0].strip() if lines and lines[0].strip() else None


def build_untrained_checkpoint(
    out_dir: str | Path,
    *,
    seed: int = 0,
    vocab_size: int = 512,
    n_positions: int = 256,
    n_embd: int = 64,
    n_layer: int = 2,
    n_head: int = 2,
) -> Path:
    """A random-weight checkpoint: instant to build, for wiring tests."""
    out_dir = Path(out_dir)
    corpus = build_corpus(seed, count=40)
    tokenizer = _build_tokenizer(corpus, vocab_size)
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=tokenizer.eos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    model = GPT2LMHeadModel(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(str(out_dir))
    tokenizer.save_pretrained(str(out_dir))
    return out_dir


def build_tiny_checkpoint(
    out_dir: str | Path,
    *,
    seed: int = 0,
    vocab_size: int = 1024,
    n_positions: int = 256,
    n_embd: int = 128,
    n_layer: int = 2,
    n_head: int = 4,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
    epochs: int = 10,
    max_extra_epochs: int = 60,
) -> Path:
    """Train and save the tiny checkpoint; returns its directory.

    Trains at least ``epochs`` epochs, then keeps going (up to
    ``max_extra_epochs`` more) until the behavior self-check passes on
    held-out questions.
    """
    out_dir = Path(out_dir)
    corpus = build_corpus(seed)
    tokenizer = _build_tokenizer(corpus, vocab_size)

    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=tokenizer.eos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    model = GPT2LMHeadModel(config)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info("tiny model: %.2fM parameters", n_params / 1e6)
    assert n_params < 100_000_000

    input_ids, labels, attention = _encode_blocks(tokenizer, corpus)
    optimizer = torch.optim.AdamW(model.parameters(), lr=learning_rate)
    lr_dropped = False

    def run_epoch() -> float:
        model.train()
        perm = torch.randperm(input_ids.shape[0])
        total, count = 0.0, 0
        for start in range(0, input_ids.shape[0], batch_size):
            idx = perm[start : start + batch_size]
            loss = model(
                input_ids=input_ids[idx],
                attention_mask=attention[idx],
                labels=labels[idx],
            ).loss
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            count += 1
        return total / max(count, 1)

    loss = float("inf")
    for epoch in range(1, epochs + max_extra_epochs + 1):
        loss = run_epoch()
        logger.info("pretrain epoch %d: loss %.4f", epoch, loss)
        if loss < 0.7 and not lr_dropped:
            # Finish memorization at a gentler rate once the shape is learned.
            for group in optimizer.param_groups:
                group["lr"] = learning_rate / 4
            lr_dropped = True
        if epoch >= epochs and loss < 0.35 and _self_check(model, tokenizer, seed):
            break
    else:
        raise RuntimeError(
            f"tiny model failed its behavior self-check after {epochs + max_extra_epochs} "
            "epochs; raise epochs or change the seed"
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(str(out_dir))
    tokenizer.save_pretrained(str(out_dir))
    logger.info("saved tiny checkpoint to %s", out_dir)
    return out_dir
