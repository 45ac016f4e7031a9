"""Acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line before asserting; the
lines are repeated in an "acceptance criteria" section of the terminal
summary.  The desk-scale
experiments (criteria 5-7) train 12 models and take roughly 25 minutes on
one core; they are shared through a module-level cache.
"""

import hashlib
import time

import numpy as np
import pytest

from lupindp import tensor as T
from lupindp.cli import main
from lupindp.data import (
    LvParams,
    OscillatorParams,
    TaskSpec,
    conserved_quantity_v,
    generate_dataset,
    oscillator_energy,
    simulate_oscillators,
)
from lupindp.evaluation import EvalProtocol, evaluate, predict_dataset
from lupindp.metrics import ForecastSet, calibration_error, sharpness
from lupindp.model import ModelConfig, init_model
from lupindp.odeint import rk4_solve, rk4_solve_mlp, rk4_solve_second_order
from lupindp.tensor import LatentDistribution, Tape
from lupindp.training import TrainConfig, elbo_loss, sample_split, train

from conftest import CRITERIA, grad_check

N_TRAIN, N_TEST, EPOCHS, SEEDS = 200, 100, 50, (0, 1, 2)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    CRITERIA.append(line)
    assert ok, detail


# 1 ---------------------------------------------------------------------------


def test_criterion_1_gradients():
    rng = np.random.default_rng(0)
    w = {}

    def ws(x):
        key = x.shape
        w.setdefault(key, np.random.default_rng(len(w)).normal(size=key))
        return T.sum(T.mul(x, w[key]))

    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5
    checks = {
        "relu": (lambda t: ws(T.relu(t[0])), [x]),
        "softplus": (lambda t: ws(T.softplus(t[0])), [x]),
        "exp": (lambda t: ws(T.exp(t[0])), [x]),
        "log": (lambda t: ws(T.log(t[0])), [rng.uniform(0.2, 3, (3, 4))]),
        "neg": (lambda t: ws(T.neg(t[0])), [x]),
        "add": (lambda t: ws(T.add(t[0], t[1])), [rng.normal(size=(3, 4)), rng.normal(size=4)]),
        "sub": (lambda t: ws(T.sub(t[0], t[1])), [rng.normal(size=(2, 1, 3)), rng.normal(size=(1, 5, 3))]),
        "mul": (lambda t: ws(T.mul(t[0], t[1])), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "matmul": (lambda t: ws(T.matmul(t[0], t[1])), [rng.normal(size=(5, 3)), rng.normal(size=(3, 4))]),
        "linear": (lambda t: ws(T.linear(*t)), [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)]),
        "mlp": (
            lambda t: ws(T.mlp(t[0], [(t[1], t[2]), (t[3], t[4])], "softplus")),
            [rng.normal(size=s) for s in [(4, 3), (3, 5), (5,), (5, 2), (2,)]],
        ),
        "sum": (lambda t: ws(T.sum(t[0], axis=1)), [rng.normal(size=(3, 4, 2))]),
        "mean": (lambda t: ws(T.mean(t[0], axis=0)), [rng.normal(size=(3, 4, 2))]),
        "logsumexp": (lambda t: ws(T.logsumexp(t[0], axis=1)), [rng.normal(size=(3, 4, 2))]),
        "concat": (lambda t: ws(T.concat(t, axis=1)), [rng.normal(size=(2, 3)), rng.normal(size=(2, 5))]),
        "stack": (lambda t: ws(T.stack(t, axis=1)), [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
        "reshape": (lambda t: ws(T.reshape(t[0], (3, 2))), [rng.normal(size=(2, 3))]),
        "take": (lambda t: ws(T.take(t[0], (slice(None), np.array([0, 2, 2])))), [rng.normal(size=(2, 3))]),
        "lincomb": (lambda t: ws(T.lincomb(t, [0.5, -2.0])), [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
        "gaussian_log_pdf": (
            lambda t: T.gaussian_log_pdf(t[0], t[1], t[2]),
            [rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.uniform(0.3, 2, (4, 2))],
        ),
        "kl": (
            lambda t: T.kl_diag_gaussians(LatentDistribution(t[0], t[1]), LatentDistribution(t[2], t[3])),
            [rng.normal(size=(3, 4)), rng.uniform(0.3, 2, (3, 4)), rng.normal(size=(3, 4)), rng.uniform(0.3, 2, (3, 4))],
        ),
        "sample": (
            lambda t: ws(T.reparameterized_sample(LatentDistribution(t[0], t[1]), np.random.default_rng(3))),
            [rng.normal(size=(2, 3)), rng.uniform(0.3, 2, (2, 3))],
        ),
        "rk4_solve": (
            lambda t: ws(T.stack(rk4_solve(lambda s, y, c: T.mul(c, y), t[0], np.linspace(0, 1, 4), cond=t[1]), axis=0)),
            [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))],
        ),
        "rk4_solve_mlp": (
            lambda t: ws(rk4_solve_mlp([(t[2], t[3]), (t[4], t[5]), (t[6], t[7])], "relu", t[0], t[1], np.array([0.0, 0.4, 1.0]))),
            [rng.normal(size=s) for s in [(2, 3), (2, 2), (6, 5), (5,), (5, 5), (5,), (5, 3), (3,)]],
        ),
    }
    worst = {name: grad_check(fn, arrays) for name, (fn, arrays) in checks.items()}

    cfg = ModelConfig(hidden=8, rep_dim=4, pi_rep_dim=4, latent_dim=3, ode_dim=3, max_step=0.1, time_scale=15.0)
    model = init_model(cfg, 2)
    recs = generate_dataset("lv", 2, 7)
    srng = np.random.default_rng(5)
    splits = [sample_split(100, srng, (3, 6), (10, 14)) for _ in recs]

    def loss():
        return elbo_loss(model, recs, splits, "lupi", np.random.default_rng(11))

    with Tape() as tape:
        tape.backward(loss())
    err = 0.0
    for _, p in model.named_parameters():
        numeric = np.zeros_like(p.data)
        for i in np.ndindex(p.data.shape):
            orig = p.data[i]
            p.data[i] = orig + 1e-5
            up = loss().item()
            p.data[i] = orig - 1e-5
            down = loss().item()
            p.data[i] = orig
            numeric[i] = (up - down) / 2e-5
        err = max(err, np.linalg.norm(numeric - p.grad) / max(np.linalg.norm(numeric), np.linalg.norm(p.grad), 1e-8))
    worst["elbo_loss"] = err
    name = max(worst, key=worst.get)
    report(1, worst[name] < 1e-4, f"{len(worst)} checks, worst rel. error {worst[name]:.2e} ({name})")


# 2 ---------------------------------------------------------------------------


def test_criterion_2_integrator():
    times = np.arange(0, 10.005, 0.01)
    x, _ = rk4_solve_second_order(lambda t, x, v, c: -x, [1.0], [0.0], times, substeps=1)
    err = np.abs(x[:, 0] - np.cos(times)).max()

    def decay_err(h):
        ts = np.arange(0, 2 + h / 2, h)
        ys = np.array(rk4_solve(lambda t, y, c: -y, np.array([1.0]), ts, substeps=1))[:, 0]
        return np.abs(ys - np.exp(-ts)).max()

    factor = decay_err(0.1) / decay_err(0.05)
    report(2, err < 1e-6 and 12 <= factor <= 20, f"max error {err:.2e}, convergence factor {factor:.2f}")


# 3 ---------------------------------------------------------------------------


def test_criterion_3_conservation():
    drift = 0.0
    for rec in generate_dataset("lv", 100, 0):
        v = conserved_quantity_v(LvParams(1, 1), rec.values[:, 0], rec.values[:, 1])
        drift = max(drift, np.abs(v - v[0]).max())
    rise = -np.inf
    task = TaskSpec.from_name("damping")
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = OscillatorParams(k=1.0, c=rng.uniform(0.5, 2.0), x0=tuple(rng.uniform(-1, 1, 2)), v0=tuple(rng.uniform(-0.5, 0.5, 2)))
        x, v = simulate_oscillators(p, task.grid(), return_velocities=True)
        rise = max(rise, np.diff(oscillator_energy(p.k, x, v)).max())
    report(3, drift < 1e-4 and rise <= 1e-8, f"L-V max |V(t)-V(0)| {drift:.2e}; largest energy increase {rise:.2e}")


# 4 ---------------------------------------------------------------------------


def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(1)
    mu, sd = rng.normal(size=100_000), rng.uniform(0.5, 2.0, size=100_000)
    y = mu + sd * rng.standard_normal(100_000)
    sampler = calibration_error(ForecastSet(y, mu, sd))
    y2 = rng.normal(size=1000)
    exact = calibration_error(ForecastSet(y2, y2, np.ones_like(y2)))
    sharp = sharpness(ForecastSet(y2, y2, np.full_like(y2, 2.0)))
    ok = sampler < 0.01 and exact == pytest.approx(1.675, abs=1e-12) and sharp == 4.0
    report(4, ok, f"sampler {sampler:.2e}, median-exact {exact:.6f}, sharpness {sharp}")


# 5-7: desk-scale experiments --------------------------------------------------

DESK_RUNS = {}


def desk_run(task, seed, mode):
    key = (task, seed, mode)
    if key not in DESK_RUNS:
        spec = TaskSpec.from_name(task)
        train_set = generate_dataset(spec, N_TRAIN, seed)
        test_set = generate_dataset(spec, N_TEST, seed, first_id=N_TRAIN)
        spacing = spec.horizon / 99
        cfg = ModelConfig(max_step=spacing / 4, time_scale=spec.horizon)
        model = init_model(cfg, seed)
        t0 = time.time()
        train(model, train_set, TrainConfig(epochs=EPOCHS, seed=seed), mode)
        plain = evaluate(model, test_set, EvalProtocol(seed=seed), mode, task=spec.kind)
        starred = evaluate(model, test_set, EvalProtocol(seed=seed, starred=True), mode, task=spec.kind)
        DESK_RUNS[key] = (plain, starred)
        print(
            f"  {task} seed {seed} {mode}: MSE {plain.mse:.4f} cal {plain.calibration_error:.4f} "
            f"| starred MSE {starred.mse:.4f} | {time.time() - t0:.0f}s"
        )
    return DESK_RUNS[key]


def medians(task):
    out = {}
    for mode in ("lupi", "nopi"):
        runs = [desk_run(task, s, mode)[0] for s in SEEDS]
        out[mode] = (float(np.median([r.mse for r in runs])), float(np.median([r.calibration_error for r in runs])))
    return out


def test_criterion_5_lv_direction():
    m = medians("lv")
    (lm, lc), (nm, nc) = m["lupi"], m["nopi"]
    detail = f"median MSE LUPI {lm:.4f} vs NoPI {nm:.4f}; median calibration LUPI {lc:.4f} vs NoPI {nc:.4f}"
    report(5, lm < nm and lc < nc, detail)


def test_criterion_6_damping_direction():
    m = medians("damping")
    (lm, lc), (nm, nc) = m["lupi"], m["nopi"]
    detail = f"median calibration LUPI {lc:.4f} vs NoPI {nc:.4f}; median MSE LUPI {lm:.4f} vs 1.1 x NoPI {1.1 * nm:.4f}"
    report(6, lc < nc and lm <= 1.1 * nm, detail)


def test_criterion_7_starred_ordering():
    combos = [("lv", 0), ("lv", 1), ("lv", 2), ("damping", 0), ("damping", 1)]
    wins = []
    for task, seed in combos:
        plain, starred = desk_run(task, seed, "lupi")
        wins.append(starred.mse < plain.mse)
    report(7, sum(wins) >= 4, f"starred MSE below unstarred in {sum(wins)} of {len(combos)} LUPI checkpoints")


# 8 ---------------------------------------------------------------------------


def test_criterion_8_structural(monkeypatch):
    from lupindp import training
    from lupindp.data import TrajectoryRecord
    from lupindp.model import ObservationBatch

    cfg = ModelConfig(max_step=10 / 99 / 4, time_scale=10.0)
    model = init_model(cfg, 0)
    recs = generate_dataset("damping", 10, 0)
    zero_every_step = []
    real_step = training.Adam.step

    def step(self):
        zero_every_step.append(all(p.grad is None or not p.grad.any() for p in model.privileged_parameters()))
        real_step(self)

    monkeypatch.setattr(training.Adam, "step", step)
    before = [p.data.copy() for p in model.privileged_parameters()]
    train(model, recs, TrainConfig(epochs=2, batch_size=2, val_fraction=0.0), "nopi")
    monkeypatch.undo()
    grads_ok = len(zero_every_step) == 10 and all(zero_every_step)
    grads_ok &= all(np.array_equal(a, p.data) for a, p in zip(before, model.privileged_parameters()))

    for w, b in model.g_res.layers:
        w.data[:] = 0.0
        b.data[:] = 0.0
    obs = ObservationBatch.from_sets([(r.times[:20], r.values[:20]) for r in recs[:3]])
    times = recs[0].times
    _, (m1, s1) = model.forward(obs, times, pi=[r.pi for r in recs[:3]], rng=np.random.default_rng(4))
    _, (m2, s2) = model.forward(obs, times, rng=np.random.default_rng(4))
    bitwise = np.array_equal(m1.data, m2.data) and np.array_equal(s1.data, s2.data)

    class NanPi(TrajectoryRecord):
        reads = 0

        def __getattribute__(self, name):
            if name == "pi":
                type(self).reads += 1
                return float("nan")
            return object.__getattribute__(self, name)

    sentinels = []
    for r in recs:
        s = object.__new__(NanPi)
        for f in ("series_id", "times", "values"):
            object.__setattr__(s, f, getattr(r, f))
        sentinels.append(s)
    fresh = init_model(cfg, 1)
    a = predict_dataset(fresh, sentinels, EvalProtocol(n_samples=4), "lupi")
    b = predict_dataset(fresh, recs, EvalProtocol(n_samples=4), "lupi")
    never_read = NanPi.reads == 0 and all(np.array_equal(x, y) for x, y in zip(a, b))
    report(
        8,
        grads_ok and bitwise and never_read,
        f"nopi privileged grads zero on all {len(zero_every_step)} steps: {grads_ok}; "
        f"zero g' train/test bitwise: {bitwise}; unstarred reads of pi: {NanPi.reads}",
    )


# 9 ---------------------------------------------------------------------------


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_9_reproducibility(tmp_path):
    digests = []
    for run in range(2):
        root = tmp_path / f"r{run}"
        data = root / "data"
        codes = [
            main(["generate", "--task", "lv", "--seed", "3", "--n-train", "8", "--n-test", "5", "--out", str(data)]),
            main(["train", "--data", str(data / "train.txt"), "--mode", "lupi", "--seed", "3", "--epochs", "2", "--out", str(root / "m")]),
            main(["evaluate", "--checkpoint", str(root / "m/checkpoint.txt"), "--data", str(data / "test.txt"), "--seed", "3", "--out", str(root / "e")]),
            main(["report", str(root / "e"), "--out", str(root / "rep")]),
        ]
        assert codes == [0, 0, 0, 0]
        names = ["data/train.txt", "data/test.txt", "m/checkpoint.txt", "e/metrics.json", "rep/report.csv", "rep/report.txt"]
        digests.append({n: _sha(root / n) for n in names})
    same = digests[0] == digests[1]
    report(9, same, f"{len(digests[0])} artefacts compared, identical: {same}")
