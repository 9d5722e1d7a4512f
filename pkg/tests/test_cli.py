import io
from collections import Counter

import numpy as np
import pytest

from permrank import cli
from permrank.core import FactorPair, init_factors
from permrank.data_io import format_model, format_rankings, parse_rankings, read_model
from permrank.factored_pl import DampingSchedule, FplModel, predict_sort
from permrank.latent_pl import MixtureModel
from permrank.loglinear.models import PairwiseModel
from permrank.oracle import exact_distribution, tv_distance
from permrank.pairwise import RegWeights

TOY = "0\t3,1,2\n1\t0,2\n2\t1,3,0,2\n"


def run(*argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], out, err, io.StringIO(stdin))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def toy(tmp_path):
    p = tmp_path / "toy.txt"
    p.write_text(TOY)
    return p


@pytest.fixture
def synth(tmp_path):
    p = tmp_path / "syn.txt"
    code, _, _ = run("synth", "--users", 40, "--items", 12, "--k", 2, "--n-min", 4, "--n-max", 8,
                     "--scale", 2, "--seed", 3, "--out", p)
    assert code == 0
    return p


def test_train_zero_epochs_writes_init(toy, tmp_path):
    out = tmp_path / "m.model"
    code, _, err = run("train", "--model", "factored-pl", "--in", toy, "--out", out, "--epochs", 0,
                       "--k", 2, "--seed", 7, "--no-figures")
    assert code == 0
    init = init_factors(3, 4, 2, np.random.default_rng(7))
    expected = FplModel(init, DampingSchedule("none"), RegWeights(0.01, 0.01))
    assert out.read_text() == format_model(expected)
    assert "# seed = 7" in err and "# k = 2" in err and "# alpha = 0.01" in err


@pytest.mark.parametrize("kind", ["pairwise-baseline", "factored-pl", "latent-pl", "loglin-positional", "loglin-pairwise"])
def test_train_each_kind(kind, synth, tmp_path):
    out = tmp_path / f"{kind}.model"
    code, _, err = run("train", "--model", kind, "--in", synth, "--out", out, "--epochs", 5, "--k", 2, "--tau", 2)
    assert code == 0, err
    assert read_model(out.read_text(), expected_kind=kind) is not None
    assert (tmp_path / f"{kind}.model.trace.csv").read_text().startswith("epoch,value\n")
    assert (tmp_path / f"{kind}.model.trace.png").stat().st_size > 0


def test_train_pl_trainer(synth, tmp_path):
    out = tmp_path / "p.model"
    code, _, _ = run("train", "--model", "loglin-pairwise", "--trainer", "pl", "--structure", "swapping",
                     "--in", synth, "--out", out, "--epochs", 3, "--tau", 2, "--no-figures")
    assert code == 0


def test_latent_trace_non_decreasing(synth, tmp_path):
    out = tmp_path / "lat.model"
    run("train", "--model", "latent-pl", "--in", synth, "--out", out, "--epochs", 15, "--k", 2, "--no-figures")
    rows = (tmp_path / "lat.model.trace.csv").read_text().splitlines()[1:]
    vals = [float(r.split(",")[1]) for r in rows]
    assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


def _write_fpl(path, H, N=3):
    path.write_text(format_model(FplModel(FactorPair(np.ones((N, 1)), [H]))))


def test_predict_matches_predict_sort(toy, tmp_path):
    H = [0.3, -1.2, 2.0, 0.9, 0.1]
    model = tmp_path / "f.model"
    data = "# users=3 items=5\n" + TOY
    toy.write_text(data)
    _write_fpl(model, H)
    code, out, _ = run("predict", "--model", model, "--in", toy, "--candidates", "-", stdin="1\t4,1,3\n")
    assert code == 0
    f = FactorPair(np.ones((3, 1)), [H])
    assert out == "1\t" + ",".join(str(y) for y in predict_sort(f, 1, [4, 1, 3])) + "\n"


def test_predict_latent_k1_equals_factored_insertion(tmp_path):
    rng = np.random.default_rng(4)
    H = rng.standard_normal(10)
    data = tmp_path / "d.txt"
    data.write_text("# users=2 items=10\n0\t0,1,2,3\n1\t4,5\n")
    fpl, lat = tmp_path / "f.model", tmp_path / "l.model"
    _write_fpl(fpl, H, N=2)
    lat.write_text(format_model(MixtureModel(np.ones((2, 1)), [H])))
    req = "0\t9,8,7,6,5,4\n1\t0,1,2,3,6,7,8,9\n"
    _, a, _ = run("predict", "--model", lat, "--in", data, "--candidates", "-", stdin=req)
    _, b, _ = run("predict", "--model", fpl, "--rank", "insertion", "--in", data, "--candidates", "-", stdin=req)
    assert a == b and a.count("\n") == 2


def test_predict_empty(toy, tmp_path):
    model = tmp_path / "f.model"
    _write_fpl(model, [0.0, 1.0, 2.0, 3.0])
    assert run("predict", "--model", model, "--in", toy, "--candidates", "-", stdin="")[:2] == (0, "")
    code, out, _ = run("predict", "--model", model, "--in", toy, "--candidates", "-", stdin="2\t\n")
    assert (code, out) == (0, "2\t\n")


def test_predict_unknown_user(toy, tmp_path):
    model = tmp_path / "f.model"
    _write_fpl(model, [0.0, 1.0, 2.0, 3.0])
    code, _, err = run("predict", "--model", model, "--in", toy, "--candidates", "-", stdin="42\t1\n")
    assert code == 1 and "42" in err


def test_evaluate_perfect_model(tmp_path):
    # scores strictly decreasing in item id and every list sorted accordingly
    data = tmp_path / "d.txt"
    data.write_text("".join(f"{u}\t" + ",".join(str(y) for y in sorted(np.random.default_rng(u).permutation(8)[:6])) + "\n"
                            for u in range(5)))
    model = tmp_path / "f.model"
    _write_fpl(model, [-float(y) for y in range(8)], N=5)
    code, out, _ = run("evaluate", "--model", model, "--in", data, "--split", 0.5, "--out", tmp_path / "r.csv")
    assert code == 0
    assert "mean_kendall_tau\t1.000000" in out and "mean_ndcg@10\t1.000000" in out
    assert (tmp_path / "r.csv.png").exists()


def test_evaluate_random_model_near_zero(tmp_path):
    data = tmp_path / "d.txt"
    run("synth", "--users", 300, "--items", 30, "--k", 2, "--n-min", 10, "--n-max", 10, "--scale", 2,
        "--seed", 1, "--out", data)
    model = tmp_path / "r.model"
    rng = np.random.default_rng(99)
    model.write_text(format_model(FactorPair(rng.standard_normal((300, 2)), rng.standard_normal((2, 30)))))
    code, out, _ = run("evaluate", "--model", model, "--in", data, "--split", 0.5, "--no-figures")
    assert code == 0
    tau = float(out.split("mean_kendall_tau\t")[1].split()[0])
    assert abs(tau) <= 0.1


def test_evaluate_skips_short_lists(tmp_path):
    data = tmp_path / "d.txt"
    data.write_text("0\t0,1\n1\t2,0,1,3\n")
    model = tmp_path / "f.model"
    _write_fpl(model, [0.0, 1.0, 2.0, 3.0], N=2)
    code, out, err = run("evaluate", "--model", model, "--in", data, "--split", 0.5, "--out", tmp_path / "r.csv")
    assert code == 0
    assert "users_evaluated\t1" in out and "users_skipped\t1" in out
    assert "user 0 skipped" in err
    assert "0,skipped" in (tmp_path / "r.csv").read_text()


def test_evaluate_bad_split(toy, tmp_path):
    model = tmp_path / "f.model"
    _write_fpl(model, [0.0, 1.0, 2.0, 3.0])
    assert run("evaluate", "--model", model, "--in", toy, "--split", 1.5)[0] == 1


def _pairwise_model_file(tmp_path, model):
    p = tmp_path / "pw.model"
    p.write_text(format_model(model))
    return p


def test_sample_zero_parameters_uniform(tmp_path):
    data = tmp_path / "d.txt"
    data.write_text("0\t0,1,2\n")
    model = _pairwise_model_file(tmp_path, PairwiseModel(3, np.zeros(3)))
    code, out, _ = run("sample", "--model", model, "--in", data, "--user", 0, "--steps", 30000, "--seed", 2,
                       "--proposal", "swap")
    assert code == 0
    lines = out.splitlines()
    assert lines[-1] == "# accepted=30000 proposed=30000 rate=1.000000"
    counts = Counter(tuple(int(t) for t in line.split(",")) for line in lines[1:-1])
    assert sum(counts.values()) == 30000
    assert tv_distance(counts, exact_distribution(PairwiseModel(3, np.zeros(3)), 0, [0, 1, 2])) < 0.05


def test_sample_zero_steps(tmp_path):
    data = tmp_path / "d.txt"
    data.write_text("0\t2,0,1\n")
    model = _pairwise_model_file(tmp_path, PairwiseModel(3, np.ones(3)))
    code, out, _ = run("sample", "--model", model, "--in", data, "--user", 0, "--steps", 0)
    assert code == 0
    assert out == "2,0,1\n# accepted=0 proposed=0 rate=0.000000\n"


def test_sample_rejects_pl_models(toy, tmp_path):
    model = tmp_path / "f.model"
    _write_fpl(model, [0.0, 1.0, 2.0, 3.0])
    code, _, err = run("sample", "--model", model, "--in", toy, "--user", 0)
    assert code == 1 and "log-linear" in err


def test_synth_singletons(tmp_path):
    out = tmp_path / "s.txt"
    code, _, _ = run("synth", "--users", 2, "--items", 3, "--k", 1, "--n-min", 1, "--n-max", 1, "--out", out)
    assert code == 0
    d = parse_rankings(out.read_text())
    assert [len(rl) for rl in d.lists] == [1, 1]
    assert read_model((tmp_path / "s.txt.truth.model").read_text(), expected_kind="factored-pl").factors.K == 1


def test_synth_invalid_spec(tmp_path):
    assert run("synth", "--users", 2, "--items", 3, "--k", 5, "--out", tmp_path / "x")[0] == 1


def test_synth_parse_back(synth):
    d = parse_rankings(synth.read_text())
    assert format_rankings(d) == synth.read_text()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, toy, synth):
    assert run("train", "--model", "factored-pl", "--in", tmp_path / "missing.txt", "--out", tmp_path / "m")[0] == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("0\t1,1\n")
    assert run("train", "--model", "factored-pl", "--in", bad, "--out", tmp_path / "m")[0] == 1
    assert run("train", "--model", "nope", "--in", toy, "--out", tmp_path / "m")[0] == 1
    code, _, err = run("train", "--model", "loglin-positional", "--in", synth, "--out", tmp_path / "m",
                       "--step", "1e305", "--epochs", 20, "--no-figures")
    assert code == 2 and "diverged" in err
    trunc = tmp_path / "t.model"
    trunc.write_text("PERMRANK-MODEL 1 factored-pl\n")
    assert run("evaluate", "--model", trunc, "--in", toy)[0] == 1


def test_config_file_and_override(tmp_path, toy):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nk = 3\nepochs = 0\nalpha = 0.5\nseed = 4\n")
    code, _, err = run("train", "--config", cfg, "--model", "factored-pl", "--in", toy, "--out", tmp_path / "m",
                       "--alpha", 0.25, "--no-figures")
    assert code == 0
    assert "# k = 3" in err and "# alpha = 0.25" in err and "# seed = 4" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run("train", "--config", bad, "--in", toy, "--out", tmp_path / "m")[0] == 1


def test_help_exits_cleanly():
    assert run("--help")[0] == 0
    assert run("train", "--k", "abc")[0] == 1


def _tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_repeated_commands_byte_identical(tmp_path):
    runs = []
    for r in range(2):
        d = tmp_path / f"run{r}"
        d.mkdir()
        data = d / "data.txt"
        outs = []
        outs.append(run("synth", "--users", 30, "--items", 10, "--k", 2, "--n-min", 3, "--n-max", 7, "--seed", 5,
                        "--out", data))
        for kind in ("factored-pl", "latent-pl", "loglin-pairwise"):
            m = d / f"{kind}.model"
            outs.append(run("train", "--model", kind, "--in", data, "--out", m, "--epochs", 4, "--k", 2, "--tau", 2))
            outs.append(run("evaluate", "--model", m, "--in", data, "--out", d / f"{kind}.csv"))
        outs.append(run("predict", "--model", d / "latent-pl.model", "--in", data, "--candidates", "-",
                        stdin="0\t" + ",".join(str(y) for y in range(10) if y not in parse_rankings(data.read_text()).list_for(0).items) + "\n"))
        outs.append(run("sample", "--model", d / "loglin-pairwise.model", "--in", data, "--user", 1, "--steps", 500,
                        "--seed", 9, "--out", d / "samples.txt"))
        runs.append((outs, _tree(d)))
    (o1, t1), (o2, t2) = runs
    assert [o[:2] for o in o1] == [o[:2] for o in o2]
    assert [o[2].replace("run0", "run1") for o in o1] == [o[2] for o in o2]
    assert t1 == t2
