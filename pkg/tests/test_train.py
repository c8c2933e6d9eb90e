import numpy as np
import pytest

from resguide.config import RunConfig
from resguide.data import load_corpus, synth_corpus
from resguide.model import ModelConfig, ResGuideModel
from resguide.train import (EvalReport, EvalRow, NumericError, degraded_pairs, evaluate, log_header, parse_report,
                            train_model, worker_count)

SMALL = dict(blocks=2, features=4, recursions=1, batch_size=2, patch_size=16)


@pytest.fixture(scope="module")
def pairs(tmp_path_factory):
    root = tmp_path_factory.mktemp("c")
    synth_corpus(root, 6, "heavy", seed=21, size=40)
    return load_corpus(root)[:2]


def test_log_header():
    assert log_header(3) == "iter,L_total,L_B1,L_B2,L_B3,L_merge,clamp_events"


def test_history_and_callbacks(pairs):
    cfg = RunConfig(iterations=5, checkpoint_every=2, **SMALL)
    seen, ckpts = [], []
    state = train_model(cfg, pairs[0], on_iteration=lambda it, v, c: seen.append((it, len(v), c)),
                        on_checkpoint=lambda it, m: ckpts.append(it))
    assert len(state.history) == 5
    assert all(len(h) == 1 + 2 + 1 for h in state.history)
    assert [s[0] for s in seen] == list(range(5)) and all(s[1] == 4 for s in seen)
    assert ckpts == [2, 4]
    for h in state.history:
        assert h[0] == pytest.approx(sum(h[1:]) / 3, rel=1e-6)
    assert state.optimizer.iteration == 5


def test_training_moves_every_parameter(pairs):
    cfg = RunConfig(iterations=2, **SMALL)
    init = ResGuideModel.initialized(cfg.model_config(), cfg.seed)
    state = train_model(cfg, pairs[0])
    for a, b in zip(init.variables(), state.model.variables()):
        assert not np.array_equal(a.value, b.value), a.name


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(pairs):
    cfg = RunConfig(iterations=3, **SMALL)
    model = ResGuideModel.initialized(cfg.model_config(), 0)
    model.blocks[0].out.bias.value[...] = np.inf
    with pytest.raises(NumericError):
        train_model(cfg, pairs[0], model=model)


def test_same_seed_same_result(pairs):
    cfg = RunConfig(iterations=3, **SMALL)
    a, b = train_model(cfg, pairs[0]), train_model(cfg, pairs[0])
    assert a.history == b.history
    for x, y in zip(a.model.variables(), b.model.variables()):
        assert x.value.tobytes() == y.value.tobytes()


def test_noise_mode_replaces_rain(pairs):
    cfg = RunConfig(noise_sigma=0.1)
    out = degraded_pairs(cfg, pairs[0], [0, 2])
    for (noisy, clean), i in zip(out, [0, 2]):
        assert clean is pairs[0][i][1]
        assert abs(float((noisy - clean).std()) - 0.1) < 0.02
    assert degraded_pairs(RunConfig(), pairs[0], [1])[0][0] is pairs[0][1][0]


def test_report_shape_and_round_trip(pairs):
    model = ResGuideModel.initialized(ModelConfig(**{k: SMALL[k] for k in ("blocks", "features", "recursions")}), 1)
    rep = evaluate(model, pairs[0], pairs[1])
    assert len(rep.rows) == 6 * 3
    assert rep.blocks == ["1", "2", "merged"]
    again = parse_report(rep.to_csv())
    for a, b in zip(rep.rows, again):
        assert (a.image, a.block) == (b.image, b.block)
        assert abs(a.ssim - b.ssim) <= 5e-7 and abs(a.psnr - b.psnr) <= 5e-7
    s, p = rep.mean("merged")
    assert s == pytest.approx(np.mean([r.ssim for r in rep.rows if r.block == "merged"]))
    with pytest.raises(KeyError):
        rep.mean("7")


def test_report_means_footer():
    rep = EvalReport([EvalRow("a", "1", 0.5, 10.0), EvalRow("b", "1", 0.7, float("inf"))], 0.25, 8.0)
    text = rep.to_csv().splitlines()
    assert text == ["image,block,ssim,psnr", "a,1,0.500000,10.000000", "b,1,0.700000,inf",
                    "# mean,input,0.250000,8.000000", "# mean,1,0.600000,inf"]


def test_parallel_evaluation_matches_sequential(pairs, monkeypatch):
    model = ResGuideModel.initialized(ModelConfig(blocks=2, features=4, recursions=1), 2)
    seq = evaluate(model, pairs[0], pairs[1]).to_csv()
    monkeypatch.setenv("RESGUIDE_THREADS", "3")
    assert worker_count() == 3
    assert evaluate(model, pairs[0], pairs[1]).to_csv() == seq


def test_worker_count_parsing(monkeypatch):
    monkeypatch.delenv("RESGUIDE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("RESGUIDE_THREADS", "zero")
    assert worker_count() == 1
    monkeypatch.setenv("RESGUIDE_THREADS", "-4")
    assert worker_count() == 1


@pytest.fixture(scope="module")
def desk_pairs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    synth_corpus(root, 16, "heavy", seed=0)
    return load_corpus(root)[0]


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_falls_over_the_first_200_iterations(desk_pairs, seed):
    cfg = RunConfig(iterations=220, seed=seed)
    totals = np.array([h[0] for h in train_model(cfg, desk_pairs).history])
    # 20-step windows starting at iterations 0 and 200
    start, end = totals[:20].mean(), totals[200:220].mean()
    assert end < start
