"""Train and evaluate model variants side by side."""

import logging
from typing import Callable, Dict, List, Sequence

from .corpus import Bag, Instance
from .evaluate import count_positives, metrics, predict_all
from .manifest import config_hash
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

ABLATION_ORDER = ("no_rel_emb", "no_et", "sdp", "no_rel_attn", "full")
VARIANT_TITLES = {
    "no_rel_emb": "w/o relation embedding",
    "no_et": "w/o entity types",
    "sdp": "with SDP input",
    "no_rel_attn": "w/o relation attention",
    "full": "full model",
}
REPORT_NS = (100, 200, 300)


def run_ablation(build_model: Callable[[str], object], train_bags: Sequence[Bag], train_instances: Sequence[Instance],
                 test_bags: Sequence[Bag], test_instances: Sequence[Instance], config: TrainConfig,
                 variants: Sequence[str] = ABLATION_ORDER, base_config: Dict = None) -> List[Dict]:
    """One row per variant: AUC, P@N and the hash of the exact configuration used."""
    rows = []
    for variant in variants:
        model = build_model(variant)
        run_cfg = dict(base_config or {}, variant=variant, train=config.to_json())
        logger.info("ablation: training %s", variant)
        train(model, train_bags, train_instances, config)
        preds = predict_all(test_bags, model, test_instances)
        m = metrics(preds, count_positives(test_bags, model.vocab), REPORT_NS)
        rows.append({"variant": variant, "config_hash": config_hash(run_cfg), "config": run_cfg, **m})
    return rows


def format_report(rows: Sequence[Dict]) -> str:
    header = f"{'variant':<26}{'AUC':>8}" + "".join(f"{'P@' + str(n):>9}" for n in REPORT_NS) + "  config"
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = "".join(f"{100 * r[f'p@{n}']:>9.1f}" if r.get(f"p@{n}") is not None else f"{'-':>9}"
                        for n in REPORT_NS)
        title = VARIANT_TITLES.get(r["variant"], r["variant"])
        lines.append(f"{title:<26}{r['auc']:>8.3f}{cells}  {r['config_hash']}")
    return "\n".join(lines)
