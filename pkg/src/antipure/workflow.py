"""End-to-end perturb / purify / fine-tune / sample harness with CSV reports.

Arms differ only in the perturbation objective; every stochastic choice is
derived from the same seeds across arms so metric differences are attributable
to the perturbation alone.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attack import ARM_LOSSES, AttackConfig, perturb_arm
from .dct import dct_matrix
from .denoiser import DenoiserModel
from .diffusion import NoiseSchedule, ddpm_loss, reverse
from .purify import PurifyConfig, gridpure_checkpoints

PSNR_CAP = 300.0  # keeps the identity arm's metrics finite

IMAGE_COLUMNS = ("arm", "checkpoint", "image", "adv_linf", "adv_mse", "adv_hf_ratio",
                 "purified_mse", "purified_psnr", "purified_hf_ratio")
SUMMARY_COLUMNS = ("arm", "checkpoint", "mean_adv_hf_ratio", "mean_purified_mse",
                   "mean_purified_psnr", "mean_purified_hf_ratio",
                   "finetune_sample_hf_ratio", "finetune_eval_ddpm_loss")


def hf_energy_ratio(x, s: int) -> float:
    """Fraction of patchwise DCT energy in the bottom-right-quarter bands."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"hf_energy_ratio: expected (C, H, W), got {x.shape}")
    c, h, w = x.shape
    if s < 2 or s % 2 or h % s or w % s:
        raise ValueError(f"hf_energy_ratio: patch side {s} invalid for dims {(h, w)}")
    patches = x.reshape(c, h // s, s, w // s, s).transpose(0, 1, 3, 2, 4)
    basis = dct_matrix(s)
    coefs = basis @ (patches @ basis.T)
    total = float(np.sum(coefs ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(coefs[..., s // 2:, s // 2:] ** 2) / total)


def mse(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float) -> float:
    """Peak signal-to-noise ratio for the [-1, 1] range, capped at PSNR_CAP dB."""
    if mse_value <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(4.0 / mse_value), PSNR_CAP))


def derive_seed(*keys) -> int:
    """Stable child seed from integer keys (order-sensitive)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def finetune_on(dataset, base: DenoiserModel, steps: int, lr: float, seed: int,
                sched: NoiseSchedule) -> DenoiserModel:
    """Continue SGD on the noise-prediction loss from base's parameters.

    Returns a new model; `base` is untouched. This is the customization
    stand-in: plain fine-tuning on a small concept set.
    """
    from .denoiser import _sgd  # shared SGD loop

    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 4 or len(dataset) == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) array")
    model = base.copy()
    rng = np.random.default_rng([0xF17E, seed])
    curve = _sgd(model, dataset, steps, lr, rng, sched)
    model.loss_curve = curve
    model.train_steps = base.train_steps + steps
    model.final_loss = curve[-1] if curve else base.final_loss
    return model


def eval_ddpm_loss(model: DenoiserModel, images, sched: NoiseSchedule, seed: int) -> float:
    """Mean noise-prediction loss over images at a seeded (t, eps) per image."""
    vals = []
    for j, x in enumerate(np.asarray(images)):
        rng = np.random.default_rng([0xE7A1, seed, j])
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(x.shape)
        vals.append(ddpm_loss(model, x, t, eps, sched).item())
    return float(np.mean(vals))


@dataclass
class ExperimentReport:
    config: dict
    seed: int
    image_rows: list[dict] = field(default_factory=list)
    summary_rows: list[dict] = field(default_factory=list)

    def summary(self, arm: str, checkpoint: int) -> dict:
        for row in self.summary_rows:
            if row["arm"] == arm and row["checkpoint"] == checkpoint:
                return row
        raise KeyError(f"no summary row for arm={arm!r} checkpoint={checkpoint}")


def run_pc(clean_set, model: DenoiserModel, sched: NoiseSchedule, arms,
           purify_cfg: PurifyConfig, attack_cfg: AttackConfig,
           finetune_steps: int, finetune_lr: float, checkpoints=None,
           sample_count: int = 16, seed: int = 0) -> ExperimentReport:
    """Run every arm through perturb -> purify -> fine-tune -> sample -> score.

    `checkpoints` are cumulative purification iteration counts at which the
    purified set is snapshotted and independently fine-tuned on (the
    iteration-sweep structure); default is the final iteration only.
    """
    clean_set = np.asarray(clean_set, dtype=np.float64)
    if clean_set.ndim != 4 or len(clean_set) == 0:
        raise ValueError("clean_set must be a non-empty (N, C, H, W) array")
    arms = list(arms)
    for arm in arms:
        if arm not in ARM_LOSSES:
            raise ValueError(f"unknown arm {arm!r}; expected one of {sorted(ARM_LOSSES)}")
    if checkpoints is None:
        checkpoints = [purify_cfg.total_iterations]
    checkpoints = sorted(set(int(c) for c in checkpoints))
    s = attack_cfg.patch_size

    report = ExperimentReport(
        config={"arms": arms, "checkpoints": checkpoints,
                "attack": asdict(attack_cfg), "purify": asdict(purify_cfg),
                "finetune_steps": finetune_steps, "finetune_lr": finetune_lr,
                "sample_count": sample_count, "T": sched.T},
        seed=seed)

    for arm in arms:
        purified: dict[int, list[np.ndarray]] = {c: [] for c in checkpoints}
        adv_stats = []
        for i, x0 in enumerate(clean_set):
            cfg_i = replace(attack_cfg, seed=derive_seed(attack_cfg.seed, i))
            adv, _ = perturb_arm(arm, x0, model, cfg_i, sched)
            adv_stats.append((float(np.max(np.abs(adv - x0))), mse(adv, x0),
                              hf_energy_ratio(adv, s)))
            pcfg_i = replace(purify_cfg, seed=derive_seed(purify_cfg.seed, i))
            snaps = gridpure_checkpoints(adv, pcfg_i, model, sched, checkpoints)
            for c in checkpoints:
                purified[c].append(snaps[c])

        for c in checkpoints:
            for i, x0 in enumerate(clean_set):
                pm = mse(purified[c][i], x0)
                report.image_rows.append({
                    "arm": arm, "checkpoint": c, "image": i,
                    "adv_linf": adv_stats[i][0], "adv_mse": adv_stats[i][1],
                    "adv_hf_ratio": adv_stats[i][2],
                    "purified_mse": pm, "purified_psnr": psnr(pm),
                    "purified_hf_ratio": hf_energy_ratio(purified[c][i], s)})

            ft = finetune_on(np.stack(purified[c]), model, finetune_steps,
                             finetune_lr, seed=derive_seed(seed, c, 1), sched=sched)
            sample_hf = []
            shape = clean_set[0].shape
            for j in range(sample_count):
                noise = np.random.default_rng([seed, c, j, 2]).standard_normal(shape)
                sample = np.clip(reverse(noise, sched.T, 0, ft, sched,
                                         rng_seed=[seed, c, j, 3]), -1.0, 1.0)
                sample_hf.append(hf_energy_ratio(sample, s))
            rows = [r for r in report.image_rows
                    if r["arm"] == arm and r["checkpoint"] == c]
            report.summary_rows.append({
                "arm": arm, "checkpoint": c,
                "mean_adv_hf_ratio": float(np.mean([r["adv_hf_ratio"] for r in rows])),
                "mean_purified_mse": float(np.mean([r["purified_mse"] for r in rows])),
                "mean_purified_psnr": float(np.mean([r["purified_psnr"] for r in rows])),
                "mean_purified_hf_ratio": float(np.mean([r["purified_hf_ratio"] for r in rows])),
                "finetune_sample_hf_ratio": float(np.mean(sample_hf)),
                "finetune_eval_ddpm_loss": eval_ddpm_loss(ft, clean_set, sched, seed)})
    return report


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in columns])


def write_report(report: ExperimentReport, images_csv, summary_csv):
    """Serialize the report; one row per arm x checkpoint x image, plus means."""
    _write_csv(images_csv, IMAGE_COLUMNS, report.image_rows)
    _write_csv(summary_csv, SUMMARY_COLUMNS, report.summary_rows)
