import numpy as np
import pytest

from domainmoe import tensor as T
from domainmoe.config import RunConfig
from domainmoe.corpus import DomainSpec, generate
from domainmoe.model import TransformerModel
from domainmoe.rng import RngStream


@pytest.fixture(autouse=True)
def _reset_mode():
    T.set_checked(False)
    yield
    T.set_checked(False)


def numeric_grad(fn, arrays, which, step=1e-5):
    """Central finite differences of scalar fn w.r.t. arrays[which]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[which])
    flat = base[which].reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(*base)
        flat[i] = orig - step
        lo = fn(*base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def tiny_config(**overrides):
    cfg = RunConfig()
    cfg.model.num_layers = 1
    cfg.model.model_dim = 16
    cfg.model.num_heads = 2
    cfg.model.ffn_dim = 32
    cfg.model.max_len = 16
    cfg.model.num_experts = 2
    cfg.model.routing_k = 2
    cfg.model.expert_inner_dim = 8
    cfg.model.warmup_steps = 50
    cfg.model.peak_lr = 0.003
    cfg.batch_size = 16
    cfg.eval_every = 100
    for k, v in overrides.items():
        if hasattr(cfg.model, k):
            setattr(cfg.model, k, v)
        else:
            setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="session")
def small_corpus():
    specs = [
        DomainSpec("a", exclusive_size=20, train_count=300, dev_count=30,
                   test_count=30),
        DomainSpec("b", exclusive_size=20, train_count=300, dev_count=30,
                   test_count=30, reorder="reverse", shift=3, mixing_ratio=0.3),
    ]
    return generate(specs, RngStream(11, 17), shared_vocab_size=15)


@pytest.fixture
def tiny_model(small_corpus):
    cfg = tiny_config()
    cfg.model.src_vocab_size = len(small_corpus["train"].src_vocab)
    cfg.model.tgt_vocab_size = len(small_corpus["train"].tgt_vocab)
    return TransformerModel(cfg.model, RngStream(0, 1)), cfg


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, title): acceptance criterion; one PASS/FAIL line "
        "is printed per marked test")


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, title = marker.args
    verdict = "PASS" if call.excinfo is None else "FAIL"
    reporter = item.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        reporter.write_line(f"[{verdict}] criterion {num}: {title}")
