"""Adversarial training: LSGAN + feature matching + mel L1 + VQ commitment."""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch

from vqanon import archive
from vqanon.content import ContentEncoderConfig, end_codebook_epoch, update_codebook_ema
from vqanon.errors import DataError, NumericalError
from vqanon.features import TorchMel, compute_mel, normalize_energy_mean, normalize_f0_log
from vqanon.model import VQAnonModel
from vqanon.prosody import ProsodyEncoderConfig, stack_prosody
from vqanon.synthesis import (DiscriminatorConfig, GeneratorConfig, MultiPeriodDiscriminator,
                              MultiScaleDiscriminator)

log = logging.getLogger(__name__)

LOSS_FIELDS = ("gen_adv", "disc_adv", "mel_l1", "feature_match", "commit", "total_gen", "total_disc")
LOG_COLUMNS = ("step", "epoch") + LOSS_FIELDS + ("lr",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    lr0: float = 2e-4
    betas: tuple = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay_per_epoch: float = 0.999
    lambda_mel: float = 45.0
    lambda_fm: float = 2.0
    lambda_commit: float = 0.25
    segment_frames: int = 100
    max_steps: int = 0          # > 0 overrides epochs
    checkpoint_every: int = 10  # epochs
    disc_width_divisor: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must lie in (0, 1]")
        if min(self.lambda_mel, self.lambda_fm, self.lambda_commit) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.segment_frames < 2 or self.segment_frames % 2:
            raise ValueError("segment_frames must be even and >= 2")
        if self.batch_size < 1 or self.epochs < 0 or self.max_steps < 0:
            raise ValueError("invalid batch size / epoch / step count")


@dataclass
class LossReport:
    gen_adv: float
    disc_adv: float
    mel_l1: float
    feature_match: float
    commit: float
    total_gen: float
    total_disc: float


def lr_at_epoch(epoch, cfg):
    return cfg.lr0 * cfg.lr_decay_per_epoch ** epoch


# -- losses -----------------------------------------------------------------

def _logits(outs):
    return [o[0] if isinstance(o, (tuple, list)) else o for o in outs]


def adversarial_losses(real_outs, fake_outs):
    """Least-squares GAN losses summed over discriminator branches.

    Returns ``(gen_adv, disc_adv)``.
    """
    real, fake = _logits(real_outs), _logits(fake_outs)
    if len(real) != len(fake):
        raise ValueError("real and fake outputs have different branch counts")
    disc = sum(torch.mean((r - 1) ** 2) + torch.mean(f ** 2) for r, f in zip(real, fake))
    gen = sum(torch.mean((f - 1) ** 2) for f in fake)
    return gen, disc


def feature_matching_loss(real_feats, fake_feats):
    """Sum over branches and layers of the mean absolute feature difference."""
    if len(real_feats) != len(fake_feats):
        raise ValueError("feature lists differ in branch count")
    total = 0.0
    for rb, fb in zip(real_feats, fake_feats):
        if len(rb) != len(fb):
            raise ValueError("feature lists differ in layer count")
        for r, f in zip(rb, fb):
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch {tuple(r.shape)} vs {tuple(f.shape)}")
            total = total + torch.mean(torch.abs(r.detach() - f))
    return total


def mel_reconstruction_loss(wave_fake, wave_real, mel_fn=None):
    """Mean absolute difference between log-mel spectrograms.

    numpy inputs go through :func:`compute_mel`; tensors through a
    differentiable :class:`TorchMel` (``mel_fn``).
    """
    if isinstance(wave_fake, torch.Tensor):
        if wave_fake.shape != wave_real.shape:
            raise ValueError("waveform length mismatch")
        mel_fn = mel_fn or TorchMel().to(wave_fake.dtype)
        return torch.mean(torch.abs(mel_fn(wave_fake) - mel_fn(wave_real)))
    a, b = np.asarray(wave_fake, dtype=np.float64), np.asarray(wave_real, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("waveform length mismatch")
    return float(np.mean(np.abs(compute_mel(a).frames - compute_mel(b).frames)))


# -- data -------------------------------------------------------------------

@dataclass
class TrainingExample:
    utterance_id: str
    mel: np.ndarray       # [T, 80]
    prosody: np.ndarray   # [T, 2] normalized log-F0 and energy
    wave: np.ndarray      # [160 T]
    speaker: np.ndarray   # [D]


def make_example(feats, wave, speaker):
    T = feats.n_frames
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size != 160 * T:
        raise DataError(f"{feats.utterance_id}: waveform has {wave.size} samples, expected {160 * T}")
    try:
        f0n = normalize_f0_log(feats.track)
    except DataError:
        f0n = np.zeros(T)
    en = normalize_energy_mean(feats.track.energy)
    return TrainingExample(feats.utterance_id, feats.mel, stack_prosody(f0n, en), wave,
                           np.asarray(speaker, dtype=np.float64))


class BatchSampler:
    """Random fixed-length crops, sampled with replacement from a seeded generator."""

    def __init__(self, examples, batch_size, segment_frames, seed):
        if not examples:
            raise DataError("training corpus is empty")
        self.examples = examples
        self.batch_size = batch_size
        shortest = min(e.mel.shape[0] for e in examples)
        self.frames = min(segment_frames, shortest - shortest % 2)
        if self.frames < 2:
            raise DataError("utterances are too short to crop")
        self.generator = torch.Generator().manual_seed(seed)

    def steps_per_epoch(self):
        total = sum(e.mel.shape[0] for e in self.examples)
        return max(1, math.ceil(total / (self.frames * self.batch_size)))

    def sample(self, dtype=torch.float32):
        g = self.generator
        F_ = self.frames
        picks = torch.randint(0, len(self.examples), (self.batch_size,), generator=g).tolist()
        mel, pro, wav, spk = [], [], [], []
        for i in picks:
            e = self.examples[i]
            n_start = (e.mel.shape[0] - F_) // 2 + 1
            s = 2 * int(torch.randint(0, n_start, (1,), generator=g))
            mel.append(e.mel[s:s + F_])
            pro.append(e.prosody[s:s + F_])
            wav.append(e.wave[160 * s:160 * (s + F_)])
            spk.append(e.speaker)
        as_t = lambda xs: torch.from_numpy(np.stack(xs)).to(dtype)  # noqa: E731
        return as_t(mel), as_t(pro), as_t(wav), as_t(spk)


# -- checkpoints ------------------------------------------------------------

_TORCH_TO_NP = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8",
                torch.int32: "<i4", torch.uint8: "|u1", torch.bool: "|b1"}


def _tensor_arrays(prefix, state):
    out = {}
    for k, v in state.items():
        t = v.detach().cpu()
        out[f"{prefix}/{k}"] = t.numpy().astype(_TORCH_TO_NP[t.dtype])
    return out


def _optimizer_arrays(prefix, opt):
    sd = opt.state_dict()
    arrays = {}
    for pid, st in sd["state"].items():
        for k, v in st.items():
            t = torch.as_tensor(v).detach().cpu()
            arrays[f"{prefix}/{pid}/{k}"] = t.numpy().astype(_TORCH_TO_NP[t.dtype])
    return arrays, sd["param_groups"]


def _load_optimizer(opt, arrays, prefix, groups):
    state = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        pid, key = name[len(prefix) + 1:].split("/", 1)
        state.setdefault(int(pid), {})[key] = torch.from_numpy(arr.copy())
    for g in groups:
        g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": state, "param_groups": groups})


def save_checkpoint(path, trainer, meta_extra=None):
    arrays = {}
    arrays.update(_tensor_arrays("model", trainer.model.state_dict()))
    arrays.update(_tensor_arrays("mpd", trainer.mpd.state_dict()))
    arrays.update(_tensor_arrays("msd", trainer.msd.state_dict()))
    og, gg = _optimizer_arrays("opt_g", trainer.opt_g)
    od, gd = _optimizer_arrays("opt_d", trainer.opt_d)
    arrays.update(og)
    arrays.update(od)
    arrays["rng/sampler"] = trainer.sampler.generator.get_state().numpy()
    arrays["rng/codebook"] = trainer.code_rng.get_state().numpy()
    meta = {"step": trainer.step, "epoch": trainer.epoch, "config": trainer.config_echo(),
            "opt_g_groups": gg, "opt_d_groups": gd}
    meta.update(meta_extra or {})
    archive.save(path, "checkpoint", arrays, meta)


def load_model_checkpoint(path):
    """Rebuild the generator-side model from a checkpoint (for inference)."""
    arrays, meta = archive.load(path, kind="checkpoint")
    cfg = meta["config"]
    model = build_model(cfg)
    model.load_state_dict(_prefixed(arrays, "model"))
    model.eval()
    return model, meta


def _prefixed(arrays, prefix):
    return {k[len(prefix) + 1:]: torch.from_numpy(v.copy())
            for k, v in arrays.items() if k.startswith(prefix + "/")}


def _tuplify(d, names):
    return {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if k in names and isinstance(v, list) else v
            for k, v in d.items()}


def build_model(config_echo):
    enc = ContentEncoderConfig(**config_echo["encoder"])
    pro = ProsodyEncoderConfig(**config_echo["prosody"])
    gen = GeneratorConfig(**_tuplify(config_echo["generator"],
                                     {"upsample_factors", "upsample_kernels", "resblock_kernels",
                                      "resblock_dilations"}))
    return VQAnonModel(enc, pro, gen, seed=config_echo["train"]["seed"])


# -- loop -------------------------------------------------------------------

class Trainer:
    """Holds model, discriminators, optimizers and counters for one run."""

    def __init__(self, examples, cfg, encoder_cfg=ContentEncoderConfig(),
                 prosody_cfg=ProsodyEncoderConfig(), generator_cfg=GeneratorConfig(),
                 disc_cfg=DiscriminatorConfig(), dtype=torch.float32):
        self.cfg = cfg
        self.encoder_cfg, self.prosody_cfg, self.generator_cfg = encoder_cfg, prosody_cfg, generator_cfg
        self.disc_cfg = disc_cfg.scaled(cfg.disc_width_divisor) if cfg.disc_width_divisor > 1 else disc_cfg
        self.dtype = dtype
        self.model = VQAnonModel(encoder_cfg, prosody_cfg, generator_cfg, seed=cfg.seed).to(dtype)
        torch.manual_seed(cfg.seed + 2)
        self.mpd = MultiPeriodDiscriminator(self.disc_cfg).to(dtype)
        self.msd = MultiScaleDiscriminator(self.disc_cfg).to(dtype)
        self.mel_fn = TorchMel().to(dtype)
        self.opt_g = torch.optim.AdamW(self.model.parameters(), lr=cfg.lr0, betas=cfg.betas,
                                       weight_decay=cfg.weight_decay, fused=True)
        self.opt_d = torch.optim.AdamW(list(self.mpd.parameters()) + list(self.msd.parameters()),
                                       lr=cfg.lr0, betas=cfg.betas, weight_decay=cfg.weight_decay, fused=True)
        self.sampler = BatchSampler(examples, cfg.batch_size, cfg.segment_frames, cfg.seed + 3)
        self.code_rng = torch.Generator().manual_seed(cfg.seed + 4)
        self.steps_per_epoch = self.sampler.steps_per_epoch()
        self.step = 0
        self.epoch = 0
        self.lr_log = []
        self.reports = []

    @property
    def total_steps(self):
        return self.cfg.max_steps or self.cfg.epochs * self.steps_per_epoch

    def config_echo(self):
        return {"train": asdict(self.cfg), "encoder": asdict(self.encoder_cfg),
                "prosody": asdict(self.prosody_cfg), "generator": asdict(self.generator_cfg),
                "discriminator": asdict(self.disc_cfg), "steps_per_epoch": self.steps_per_epoch}

    def load(self, path):
        arrays, meta = archive.load(path, kind="checkpoint")
        self.model.load_state_dict(_prefixed(arrays, "model"))
        self.mpd.load_state_dict(_prefixed(arrays, "mpd"))
        self.msd.load_state_dict(_prefixed(arrays, "msd"))
        _load_optimizer(self.opt_g, arrays, "opt_g", meta["opt_g_groups"])
        _load_optimizer(self.opt_d, arrays, "opt_d", meta["opt_d_groups"])
        self.sampler.generator.set_state(torch.from_numpy(arrays["rng/sampler"].copy()))
        self.code_rng.set_state(torch.from_numpy(arrays["rng/codebook"].copy()))
        self.step, self.epoch = meta["step"], meta["epoch"]
        return meta

    def set_lr(self, epoch):
        lr = lr_at_epoch(epoch, self.cfg)
        for opt in (self.opt_g, self.opt_d):
            for g in opt.param_groups:
                g["lr"] = lr
        return lr

    def _grad_norms(self):
        norms = {}
        for name, mod in (("model", self.model), ("mpd", self.mpd), ("msd", self.msd)):
            grads = [p.grad for p in mod.parameters() if p.grad is not None]
            norms[name] = float(torch.linalg.vector_norm(torch.stack(torch._foreach_norm(grads)))) if grads else 0.0
        return norms

    def _check_finite(self, report):
        bad = [k for k, v in asdict(report).items() if not math.isfinite(v)]
        norms = self._grad_norms()
        if bad or not all(math.isfinite(v) for v in norms.values()):
            snapshot = {"step": self.step, "epoch": self.epoch, "losses": asdict(report),
                        "grad_norms": norms, "non_finite": bad}
            raise NumericalError(f"non-finite training state at step {self.step}: {bad or norms}", snapshot)

    def _set_disc_grad(self, flag):
        for p in list(self.mpd.parameters()) + list(self.msd.parameters()):
            p.requires_grad_(flag)

    def train_step(self):
        cfg = self.cfg
        mel, pro, wav, spk = self.sampler.sample(self.dtype)
        fake, q, z = self.model(mel, pro, spk)

        # discriminator
        self.opt_d.zero_grad(set_to_none=True)
        d_real = self.mpd(wav) + self.msd(wav)
        d_fake = self.mpd(fake.detach()) + self.msd(fake.detach())
        _, disc_adv = adversarial_losses(d_real, d_fake)
        disc_adv.backward()
        self.opt_d.step()

        # generator; discriminator weights frozen so no gradient is spent on them
        self.opt_g.zero_grad(set_to_none=True)
        self.opt_d.zero_grad(set_to_none=True)
        self._set_disc_grad(False)
        try:
            g_fake = self.mpd(fake) + self.msd(fake)
            with torch.no_grad():
                g_real = self.mpd(wav) + self.msd(wav)
            gen_adv, _ = adversarial_losses(g_real, g_fake)
            fm = feature_matching_loss([o[1] for o in g_real], [o[1] for o in g_fake])
            mel_l1 = mel_reconstruction_loss(fake, wav, self.mel_fn)
            commit = q.commitment_loss
            total_gen = gen_adv + cfg.lambda_mel * mel_l1 + cfg.lambda_fm * fm + cfg.lambda_commit * commit
            total_gen.backward()
        finally:
            self._set_disc_grad(True)

        report = LossReport(*(float(v.detach()) for v in (gen_adv, disc_adv, mel_l1, fm, commit, total_gen)),
                            float(disc_adv.detach()))
        self._check_finite(report)
        self.opt_g.step()
        update_codebook_ema(self.model.codebook, z, q.indices)
        self._last_latents = z.detach()
        return report

    def run(self, run_dir=None, on_step=None):
        """Train until ``total_steps``. Returns the list of LossReports of this call."""
        writer = None
        if run_dir is not None:
            os.makedirs(run_dir, exist_ok=True)
            log_path = os.path.join(run_dir, "loss_log.csv")
            _truncate_log(log_path, self.step)
            new = not os.path.exists(log_path)
            fh = open(log_path, "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(LOG_COLUMNS)
            if self.step == 0:
                self.checkpoint(run_dir)
        reports = []
        self._last_latents = None
        # subnormal weights appear late in training and slow CPU convolutions by ~20%
        torch.set_flush_denormal(True)
        try:
            while self.step < self.total_steps:
                if self.step % self.steps_per_epoch == 0:
                    self.epoch = self.step // self.steps_per_epoch
                    lr = self.set_lr(self.epoch)
                    self.lr_log.append((self.epoch, lr))
                else:
                    lr = self.opt_g.param_groups[0]["lr"]
                try:
                    report = self.train_step()
                except NumericalError as exc:
                    if run_dir is not None:
                        with open(os.path.join(run_dir, "failure.json"), "w") as f:
                            json.dump(exc.snapshot, f, indent=2, sort_keys=True)
                    raise
                self.step += 1
                reports.append(report)
                self.reports.append(report)
                if writer is not None:
                    writer.writerow([self.step, self.epoch] + [repr(getattr(report, k)) for k in LOSS_FIELDS]
                                    + [repr(lr)])
                if on_step is not None:
                    on_step(self, report)
                if self.step % self.steps_per_epoch == 0:
                    end_codebook_epoch(self.model.codebook, self._last_latents,
                                       self.encoder_cfg.dead_code_epochs, self.code_rng)
                    self.epoch = self.step // self.steps_per_epoch
                    if run_dir is not None and self.epoch % self.cfg.checkpoint_every == 0:
                        fh.flush()
                        self.checkpoint(run_dir)
            if run_dir is not None:
                self.checkpoint(run_dir)
        finally:
            torch.set_flush_denormal(False)
            if writer is not None:
                fh.close()
        return reports

    def checkpoint(self, run_dir):
        path = os.path.join(run_dir, f"ckpt_{self.step:08d}.ckpt")
        save_checkpoint(path, self)
        return path


def _truncate_log(path, step):
    """Drop rows past ``step`` (left behind by an interrupted run)."""
    if not os.path.exists(path):
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= step]
    if len(keep) != len(rows):
        with open(path, "w", newline="") as f:
            csv.writer(f).writerows(keep)


def latest_checkpoint(run_dir):
    if not os.path.isdir(run_dir):
        return None
    ckpts = sorted(p for p in os.listdir(run_dir) if p.startswith("ckpt_") and p.endswith(".ckpt"))
    return os.path.join(run_dir, ckpts[-1]) if ckpts else None


def read_loss_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in r.items()} for r in rows]


def train(examples, cfg, run_dir=None, resume=True, **model_cfgs):
    """Train from scratch, or resume from the newest checkpoint in ``run_dir``."""
    trainer = Trainer(examples, cfg, **model_cfgs)
    if run_dir is not None and resume:
        ckpt = latest_checkpoint(run_dir)
        if ckpt is not None:
            try:
                trainer.load(ckpt)
            except (DataError, KeyError, RuntimeError, ValueError) as exc:
                raise DataError(f"corrupt checkpoint {ckpt}: {exc}") from exc
            log.info("resumed from %s at step %d (epoch %d)", ckpt, trainer.step, trainer.epoch)
    trainer.run(run_dir)
    return trainer

