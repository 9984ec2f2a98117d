"""Fine-tuning loop: teacher forcing, periodic validation, early stopping.

One example per optimizer step by default (documents are long, memory is the
binding constraint); a batch_size > 1 averages gradients over consecutive
examples. Example order is a fresh deterministic permutation per epoch, so a
run is reproducible from (seed, corpus) alone and resuming from a saved step
counter lands on the exact example the interrupted run would have seen next.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_mod
from . import optim, tape
from .corpus import CorpusRecord
from .model import ModelConfig
from .optim import AdafactorState, OptimConfig
from .tokenizer import Encoding, TokenizerModel, encode


class TrainingAbortError(RuntimeError):
    """Training hit a non-finite loss; carries the 1-based step index."""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        super().__init__(f"non-finite loss at step {step}: {cause}")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    max_input_len: int = 8192
    max_output_len: int = 512
    eval_steps: int = 4000
    patience: int = 3
    max_steps: int = 100_000
    checkpointing: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_steps < 1:
            raise ValueError("eval_steps must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class EvalEntry:
    step: int
    val_loss: float
    perplexity: float


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    evals: list[EvalEntry] = field(default_factory=list)
    stop_reason: str = ""


def make_batch(record: CorpusRecord, tok: TokenizerModel,
               tcfg: TrainingConfig) -> tuple[Encoding, np.ndarray]:
    enc = encode(tok, record.article, tcfg.max_input_len, pad_to_max=False)
    target = encode(tok, record.summary, tcfg.max_output_len, pad_to_max=False)
    return enc, np.asarray(target.ids)


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence((seed, epoch))).permutation(n)


def _example_at(records, seed: int, cursor: int, perm_cache: dict) -> CorpusRecord:
    n = len(records)
    epoch = cursor // n
    if epoch not in perm_cache:
        perm_cache.clear()
        perm_cache[epoch] = _epoch_permutation(seed, epoch, n)
    return records[perm_cache[epoch][cursor % n]]


def evaluate_validation(params, mcfg: ModelConfig, records, tok: TokenizerModel,
                        tcfg: TrainingConfig) -> float:
    """Token-weighted mean cross-entropy over a split; touches no parameters."""
    if not records:
        raise ValueError("validation split is empty")
    total, tokens = 0.0, 0
    for rec in records:
        enc, target = make_batch(rec, tok, tcfg)
        loss, n_tok = forward_loss(params, mcfg, (enc, target))
        total += loss * n_tok
        tokens += n_tok
    return total / tokens


def forward_loss(params, mcfg: ModelConfig, batch) -> tuple[float, int]:
    """Loss of one teacher-forced example without building a backward graph."""
    enc, target_ids = batch
    n_real = len(enc.real_ids)
    target = model_mod._trim_target(target_ids)
    dec_in, labels = target[:-1], target[1:]
    with tape.no_grad():
        spec = model_mod._spec_for_encoding(mcfg, enc, n_real)
        enc_out = model_mod._encode(params, mcfg, np.asarray(enc.ids[:n_real]), spec)
        logits = model_mod._decode(params, mcfg, enc_out, dec_in)
        loss = tape.cross_entropy(logits, labels, np.ones(len(labels)))
    return float(loss.data), len(labels)


def should_stop(val_losses, patience: int) -> bool:
    """Stop when the last `patience` evals never beat the best seen before them."""
    if len(val_losses) <= patience:
        return False
    best_before = min(val_losses[:-patience])
    return all(v >= best_before for v in val_losses[-patience:])


def _checkpoint_paths(out_dir: Path) -> dict[str, Path]:
    return {
        "best": out_dir / "model_best.npz",
        "last": out_dir / "model_last.npz",
        "optim": out_dir / "optim_last.npz",
        "log": out_dir / "trainlog.jsonl",
        "state": out_dir / "train_state.json",
    }


def _append_log(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=False) + "\n")


def train(
    params: dict,
    mcfg: ModelConfig,
    train_records,
    val_records,
    tok: TokenizerModel,
    tcfg: TrainingConfig,
    ocfg: OptimConfig | None = None,
    out_dir: str | Path | None = None,
    resume: bool = False,
    log_every: int = 0,
) -> tuple[dict, TrainLog]:
    """Run the loop; returns (best parameters, log).

    "Best" is the checkpoint with the lowest validation loss, or the final
    parameters when no evaluation ever ran. With ``out_dir`` set, best/last
    parameters, optimizer state and a line-delimited log are kept on disk and
    ``resume=True`` continues an interrupted run from its saved step counter.
    """
    if not train_records:
        raise ValueError("training split is empty")
    ocfg = ocfg or OptimConfig(learning_rate=tcfg.learning_rate)
    paths = _checkpoint_paths(Path(out_dir)) if out_dir is not None else None
    if paths:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    log = TrainLog()
    state = optim.init_state(params)
    start_step = 0
    val_history: list[float] = []
    best_val = float("inf")
    best_params = None

    if resume:
        if not paths or not paths["state"].exists():
            raise FileNotFoundError("resume requested but no saved training state found")
        saved = json.loads(paths["state"].read_text(encoding="utf-8"))
        start_step = saved["step"]
        best_val = saved["best_val"]
        val_history = saved["val_history"]
        loaded, loaded_cfg = model_mod.load_checkpoint(paths["last"])
        if loaded_cfg != mcfg:
            raise ValueError("saved checkpoint config does not match the requested one")
        for name, p in params.items():
            p.data = loaded[name].data
        state = AdafactorState.load(paths["optim"], params)

    perm_cache: dict = {}
    step = start_step
    stop_reason = "max_steps"
    while step < tcfg.max_steps:
        step += 1
        grads_sum: dict[str, np.ndarray] | None = None
        loss_sum = 0.0
        for b in range(tcfg.batch_size):
            cursor = (step - 1) * tcfg.batch_size + b
            rec = _example_at(train_records, tcfg.seed, cursor, perm_cache)
            batch = make_batch(rec, tok, tcfg)
            try:
                loss, grads = model_mod.loss_and_gradients(
                    params, mcfg, batch, checkpointing=tcfg.checkpointing,
                    drop_seed=(tcfg.seed, step) if mcfg.dropout > 0 else None,
                )
            except model_mod.LayerNonFiniteError as e:
                raise TrainingAbortError(step, e) from e
            loss_sum += loss
            if grads_sum is None:
                grads_sum = grads
            else:
                for name in grads_sum:
                    grads_sum[name] += grads[name]
        if tcfg.batch_size > 1:
            for name in grads_sum:
                grads_sum[name] /= tcfg.batch_size
        optim.adafactor_step(params, grads_sum, state, ocfg)

        mean_loss = loss_sum / tcfg.batch_size
        log.losses.append(mean_loss)
        if paths and log_every and step % log_every == 0:
            _append_log(paths["log"], {"kind": "step", "step": step, "loss": mean_loss})

        if step % tcfg.eval_steps == 0 and val_records:
            val_loss = evaluate_validation(params, mcfg, val_records, tok, tcfg)
            entry = EvalEntry(step=step, val_loss=val_loss,
                              perplexity=float(np.exp(val_loss)))
            log.evals.append(entry)
            val_history.append(val_loss)
            if paths:
                _append_log(paths["log"], {"kind": "eval", "step": step,
                                           "val_loss": val_loss,
                                           "perplexity": entry.perplexity})
            if val_loss < best_val:
                best_val = val_loss
                best_params = {n: p.data.copy() for n, p in params.items()}
                if paths:
                    model_mod.save_checkpoint(paths["best"], params, mcfg)
            if paths:
                model_mod.save_checkpoint(paths["last"], params, mcfg)
                state.save(paths["optim"])
                paths["state"].write_text(json.dumps(
                    {"step": step, "best_val": best_val, "val_history": val_history}
                ), encoding="utf-8")
            if should_stop(val_history, tcfg.patience):
                stop_reason = "early_stop"
                break

    log.stop_reason = stop_reason
    if paths:
        model_mod.save_checkpoint(paths["last"], params, mcfg)
        state.save(paths["optim"])
        paths["state"].write_text(json.dumps(
            {"step": step, "best_val": best_val, "val_history": val_history}
        ), encoding="utf-8")
        _append_log(paths["log"], {"kind": "stop", "step": step, "reason": stop_reason})
        if not paths["best"].exists():
            model_mod.save_checkpoint(paths["best"], params, mcfg)

    if best_params is not None:
        final_best = {n: tape.parameter(arr) for n, arr in best_params.items()}
    elif paths and paths["best"].exists() and np.isfinite(best_val):
        final_best, _ = model_mod.load_checkpoint(paths["best"])
    else:
        final_best = {n: tape.parameter(p.data.copy()) for n, p in params.items()}
    return final_best, log
