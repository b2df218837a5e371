"""End-to-end acceptance criteria; each test prints one PASS/FAIL line in the summary."""

import math
import os
import socket
import time
from pathlib import Path

import numpy as np
import pytest

from domscreen.cli import main
from domscreen.clustering import FeatureMatrix, cut, hcluster, spearman_rho
from domscreen.dataset import parse_csv, write_csv
from domscreen.metrics import ConfusionCounts, accuracy, mcc, sensitivity, specificity
from domscreen.svm import KernelSpec, TrainConfig, dual_objective, load_model, loads_model, dumps_model, smo_solve
from domscreen.synth import PLANTED_GROUPS, TABLE2, synth_generate

import conftest
from oracles import adjusted_rand, brute_force_svm_dual, kernel_matrix

FIXTURES = Path(__file__).parent / "fixtures"
YEAR = "2016"
# the published figures are rounded to three decimals; a value sitting exactly on
# the half-way point needs a hair of float slack
ROUNDING = 0.0005 + 1e-12


def detail(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    split = root / "split"
    start = time.perf_counter()
    assert main(["synth", "--output", str(split), "--split", "--seed", "0", "--reference-year", YEAR]) == 0
    assert main(["train", "--input", str(split / "training.csv"), "--model", str(root / "model.txt"),
                 "--reference-year", YEAR, "--seed", "0"]) == 0
    return root, time.perf_counter() - start


@pytest.mark.criterion(1, "published confusion matrices reproduce every ACC/SE/SP/MCC to 0.0005")
def test_criterion_1_metrics(request):
    table = {
        "training": ((152, 158, 2, 10), (0.963, 0.938, 0.988, 0.927)),
        "test": ((146, 154, 1, 8), (0.971, 0.948, 0.994, 0.943)),
        "external": ((120, 118, 11, 7), (0.930, 0.945, 0.915, 0.860)),
    }
    worst = 0.0
    for counts, published in table.values():
        c = ConfusionCounts(*counts)
        got = (accuracy(c), sensitivity(c), specificity(c), mcc(c))
        worst = max(worst, max(abs(g - p) for g, p in zip(got, published)))
        assert all(abs(g - p) <= ROUNDING for g, p in zip(got, published)), (counts, got, published)
    detail(request, f"max deviation {worst:.5f}")


@pytest.mark.criterion(2, "SMO matches a brute-force QP on 50 random instances per kernel")
def test_criterion_2_smo_oracle(request):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_obj = worst_dec = worst_kkt = 0.0
    for kind in ("linear", "polynomial", "rbf"):
        for _ in range(50):
            n = int(rng.integers(2, 9))
            X = rng.random((n, 5))
            y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            y[0], y[1] = 1.0, -1.0
            C = float(2 ** rng.uniform(-2, 5))
            spec = KernelSpec(kind, gamma=float(2 ** rng.uniform(-3, 2)), degree=2, coef0=1.0)
            K = kernel_matrix(kind, X, X, spec.gamma, spec.degree, spec.coef0)
            ref = brute_force_svm_dual(K, y, C)
            res = smo_solve(X, y, TrainConfig(C=C, kernel=spec, tolerance=1e-4))
            # objective
            worst_obj = max(worst_obj, abs(dual_objective(res.alphas, y, K) - ref.objective))
            # decision values; where the optimal bias is an interval, compare against its nearest point
            f = K @ (res.alphas * y) + res.bias
            b_ref = min(max(res.bias, ref.bias_lo), ref.bias_hi)
            probe = rng.random((20, 5))
            Kp = kernel_matrix(kind, probe, X, spec.gamma, spec.degree, spec.coef0)
            dec = np.max(np.abs(np.concatenate([f, Kp @ (res.alphas * y) + res.bias])
                                - np.concatenate([K @ (ref.alpha * y), Kp @ (ref.alpha * y)]) - b_ref))
            worst_dec = max(worst_dec, float(dec))
            # KKT at tol 1e-3
            a, yf = res.alphas, y * f
            viol = np.concatenate([np.maximum(1 - yf[a <= 0], 0), np.maximum(yf[a >= C] - 1, 0),
                                   np.abs(yf[(a > 0) & (a < C)] - 1)])
            worst_kkt = max(worst_kkt, float(viol.max(initial=0.0)))
    elapsed = time.perf_counter() - start
    detail(request, f"objective {worst_obj:.1e}, decision {worst_dec:.1e}, KKT {worst_kkt:.1e}, {elapsed:.1f}s")
    assert worst_obj <= 1e-4
    assert worst_dec <= 1e-3
    assert worst_kkt <= 1e-3
    assert elapsed < 10


@pytest.mark.criterion(3, "two-point instance gives alpha = 0.5, 0.5 and bias 0")
def test_criterion_3_two_points(request):
    X = np.array([[1.0, 0, 0, 0, 0], [-1.0, 0, 0, 0, 0]])
    res = smo_solve(X, [1, -1], TrainConfig(C=1.0, kernel=KernelSpec("linear")))
    detail(request, f"alpha {res.alphas.tolist()}, bias {res.bias!r}")
    assert abs(res.alphas[0] - 0.5) <= 1e-9 and abs(res.alphas[1] - 0.5) <= 1e-9
    assert abs(res.bias) <= 1e-9


@pytest.mark.criterion(4, "k=5 cut recovers the planted groups (ARI 1.0); Spearman is monotone invariant")
def test_criterion_4_clusters(request):
    aris = []
    for seed in range(5):
        m = FeatureMatrix.from_records(synth_generate(903, seed).records)
        ours = np.empty(len(m.names), dtype=int)
        for g, members in enumerate(cut(hcluster(m), 5)):
            ours[members] = g
        truth = [next(i for i, cols in enumerate(PLANTED_GROUPS.values()) if name in cols) for name in m.names]
        aris.append(adjusted_rand(ours, truth))
    rng = np.random.default_rng(4)
    transforms = (np.exp, lambda v: v ** 3, lambda v: 7.5 * v - 2, lambda v: np.arctan(v / 40), np.cbrt)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 200))
        x = rng.integers(-30, 30, n).astype(float)
        y = x + rng.integers(-25, 25, n)
        f, g = transforms[rng.integers(len(transforms))], transforms[rng.integers(len(transforms))]
        worst = max(worst, abs(spearman_rho(x, y) - spearman_rho(f(x), g(y))))
    detail(request, f"ARI over seeds 0-4: {min(aris)}, monotone drift {worst:.1e}")
    assert all(a == 1.0 for a in aris)
    assert worst <= 1e-12


@pytest.mark.criterion(5, "default-grid training on the synthetic split: test ACC >= 0.90, MCC >= 0.80, < 5 min")
def test_criterion_5_end_to_end(request, trained, capsys):
    root, train_seconds = trained
    start = time.perf_counter()
    assert main(["evaluate", "--input", str(root / "split" / "test.csv"), "--model", str(root / "model.txt"),
                 "--output", str(root / "test_eval.csv")]) == 0
    elapsed = train_seconds + time.perf_counter() - start
    header, row = (line.split(",") for line in (root / "test_eval.csv").read_text().splitlines())
    metrics = dict(zip(header, row))
    acc, score = float(metrics["ACC"]), float(metrics["MCC"])
    detail(request, f"ACC {acc:.3f}, MCC {score:.3f}, {elapsed:.0f}s")
    assert acc >= 0.90
    assert score >= 0.80
    assert elapsed < 300


@pytest.mark.criterion(6, "repeat training is byte-identical; saved models round-trip to 1e-12")
def test_criterion_6_determinism(request, trained, tmp_path):
    root, _ = trained
    again = tmp_path / "model.txt"
    assert main(["train", "--input", str(root / "split" / "training.csv"), "--model", str(again),
                 "--reference-year", YEAR, "--seed", "0"]) == 0
    first = (root / "model.txt").read_bytes()
    assert again.read_bytes() == first
    model = load_model(again)
    reloaded = loads_model(dumps_model(model))
    probe = np.random.default_rng(6).random((1000, 5)) * 2 - 0.5
    drift = float(np.max(np.abs(model.decision_values(probe) - reloaded.decision_values(probe))))
    detail(request, f"{len(first)} bytes identical, round-trip drift {drift:.1e}")
    assert drift <= 1e-12


@pytest.mark.criterion(7, "screening 100,000 candidates takes < 60 s single-threaded and scales with --width")
def test_criterion_7_throughput(request, trained, tmp_path, capsys):
    root, _ = trained
    candidates = tmp_path / "candidates.csv"
    write_csv(synth_generate(100_000, seed=7, with_prices=False).records, candidates, include_price=False)
    timings = {}
    outputs = {}
    width = 2
    for w in (1, width):
        out = tmp_path / f"screen{w}.csv"
        start = time.perf_counter()
        assert main(["screen", "--input", str(candidates), "--model", str(root / "model.txt"),
                     "--output", str(out), "--width", str(w)]) == 0
        timings[w] = time.perf_counter() - start
        outputs[w] = out.read_bytes()
    summary = capsys.readouterr().err
    cpus = os.cpu_count() or 1
    speedup = timings[1] / timings[width]
    # with fewer cores than workers no speedup is possible; require that extra workers cost little
    expected = 0.7 * min(width, cpus)
    detail(request, f"{timings[1]:.1f}s at width 1, {timings[width]:.1f}s at width {width}, "
                    f"speedup {speedup:.2f} on {cpus} cpu(s), needed {expected:.2f}")
    assert "100000 screened" in summary
    assert timings[1] < 60
    assert outputs[1] == outputs[width]
    assert speedup >= expected


@pytest.mark.criterion(8, "synthetic class medians match the published summary within one median rank")
def test_criterion_8_calibration(request):
    checks = {"valuable": ("pr", "da", "pa", "dob"), "non_valuable": ("pr", "bl", "dob")}
    report = []
    for seed in range(3):
        data = synth_generate(903, seed)
        for cls, features in checks.items():
            idx = 0 if cls == "valuable" else 1
            rows = [r for r, lab in zip(data.records, data.labels) if lab == cls]
            for feature in features:
                values = np.sort([getattr(r, feature) for r in rows])
                n = len(values)
                target = TABLE2[feature][idx][3]
                lo, hi = values[(n - 1) // 2 - 1], values[n // 2 + 1]
                median = float(np.median(values))
                report.append(f"{cls[:3]} {feature} {median:g}") if seed == 0 else None
                assert lo <= target <= hi, (seed, cls, feature, median, target)
                assert abs(median - target) <= 1, (seed, cls, feature, median, target)
    detail(request, ", ".join(report))


class _CdxSession:
    def __init__(self, *names):
        self.names = list(names)

    def get(self, url, params=None, timeout=None):
        class R:
            status_code = 200
            text = (FIXTURES / "cdx" / self.names.pop(0)).read_text()

        return R()


@pytest.mark.criterion(9, "suite runs with networking disabled; CDX client passes recorded fixtures")
def test_criterion_9_offline(request):
    from domscreen.enrichment import WaybackCDXProvider
    from domscreen.errors import ProviderError

    attempts_before = len(conftest.NETWORK_ATTEMPTS)
    with pytest.raises(OSError, match="network disabled"):
        socket.create_connection(("207.241.224.2", 443), timeout=1)
    del conftest.NETWORK_ATTEMPTS[attempts_before:]

    def wb(*names):
        return WaybackCDXProvider(_CdxSession(*names), sleep=lambda s: None)

    assert wb("three_rows.json", "first_capture.json").wayback_cdx("example.com") == (3, 1996)
    assert wb("empty.json").wayback_cdx("example.com") == (0, None)
    with pytest.raises(ProviderError, match="byte 37"):
        wb("malformed.json").wayback_cdx("example.com")
    detail(request, f"{len(conftest.NETWORK_ATTEMPTS)} live connection attempts during the run")
    assert conftest.NETWORK_ATTEMPTS == []
