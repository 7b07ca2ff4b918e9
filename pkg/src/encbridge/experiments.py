"""The four bridge experiments plus the stock baseline that stands in for a
pretrained model.

====  ========  ===========  ==================================
id    mode      bridge init  notes
====  ========  ===========  ==================================
0     retrain   none         toy baseline, base for 1-3
1     finetune  original     identity routing at step 0
2     finetune  none         direct fine-tuning
3     finetune  gca          decoder i reads encoder L-1-i
4     retrain   original     body init xavier (or ones)
====  ========  ===========  ==================================
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import BlockNormMatrix, block_norms, weight_drift
from .checkpoint import Checkpoint
from .data import Pair, Vocab
from .eval import BleuReport, evaluate
from .model import ModelConfig
from .train import TrainConfig, TrainResult, train_run

EXPERIMENTS = {
    0: {"mode": "retrain", "bridge_init": None},
    1: {"mode": "finetune", "bridge_init": "original"},
    2: {"mode": "finetune", "bridge_init": None},
    3: {"mode": "finetune", "bridge_init": "gca"},
    4: {"mode": "retrain", "bridge_init": "original"},
}
REPORT_COLUMNS = ("experiment", "evaluate_loss", "bleu")


class MissingBaseCheckpoint(ValueError):
    pass


@dataclass
class ExperimentReport:
    experiment: int
    evaluate_loss: float
    bleu: float
    bleu_report: BleuReport
    result: TrainResult
    initial_norms: BlockNormMatrix | None = None
    final_norms: BlockNormMatrix | None = None
    drift: np.ndarray | None = None

    def row(self) -> dict:
        return {"experiment": self.experiment, "evaluate_loss": self.evaluate_loss,
                "bleu": self.bleu}


def experiment_config(exp_id: int, base: TrainConfig | None = None, **overrides) -> TrainConfig:
    """TrainConfig for experiment ``exp_id``; ``overrides`` win over the experiment's defaults."""
    if exp_id not in EXPERIMENTS:
        raise ValueError(f"unknown experiment id {exp_id}; expected one of {sorted(EXPERIMENTS)}")
    cfg = base or TrainConfig()
    return replace(cfg, **{**EXPERIMENTS[exp_id], **overrides})


def workflow_experiment(exp_id: int, train_pairs: Sequence[Pair], eval_pairs: Sequence[Pair],
                        vocab: Vocab, *, base: Checkpoint | None = None,
                        model_config: ModelConfig | None = None,
                        train_config: TrainConfig | None = None, **overrides) -> ExperimentReport:
    """Train, evaluate and (when a bridge is present) summarize the bridge.

    A given ``train_config`` is used as is; otherwise the experiment's preset
    is applied. ``overrides`` replace fields in either case.
    """
    if train_config is None:
        cfg = experiment_config(exp_id, **overrides)
    else:
        cfg = replace(train_config, **overrides)
    if cfg.mode == "finetune" and base is None:
        raise MissingBaseCheckpoint(f"experiment {exp_id} fine-tunes and needs a base checkpoint")
    if model_config is None and base is None:
        model_config = ModelConfig(vocab_size=len(vocab))
    result = train_run(cfg, train_pairs, vocab, base=base, model_config=model_config)
    loss, bleu = evaluate(result.model, list(eval_pairs), vocab)
    report = ExperimentReport(exp_id, loss, bleu.bleu, bleu, result)
    if result.model.bridge is not None:
        mc = result.model.config
        report.initial_norms = block_norms(result.initial_bridge, mc, 0, cfg.bridge_init)
        report.final_norms = block_norms(result.model.bridge, mc, result.checkpoint.step,
                                         cfg.bridge_init)
        report.drift = weight_drift(result.initial_bridge, result.model.bridge)
    return report


def write_report_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(REPORT_COLUMNS)]
    lines += [",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in REPORT_COLUMNS)
              for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path
