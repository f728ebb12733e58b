import numpy as np
import pytest

from rose.autograd import RngStream, Tape, backward
from rose.losses import sce_loss, sym_kl_loss
from rose.model import ModelSpec, build_logits, init_params

# filled in by test_acceptance.py, reported once at the end of the session
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (all coordinates)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def two_pass_objective(params, spec, X, y, rng):
    """Cross-entropy on pass 0 plus symmetric KL between two dropout passes."""
    tape = Tape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    z0 = build_logits(tape, nodes, spec, X, rng.with_pass(0))
    z1 = build_logits(tape, nodes, spec, X, rng.with_pass(1))
    loss = tape.add(sce_loss(tape, z0, y), sym_kl_loss(tape, tape.log_softmax(z0), tape.log_softmax(z1)))
    return tape, loss


@pytest.fixture
def small_problem():
    spec = ModelSpec(input_dim=5, hidden_dims=(6, 4), classes=3, dropout_rate=0.1)
    rng = np.random.default_rng(0)
    params = init_params(spec, 0)
    X = rng.normal(size=(8, 5))
    y = rng.integers(0, 3, size=8)
    return spec, params, X, y, RngStream(0, 1)
