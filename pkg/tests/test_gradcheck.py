import numpy as np

from recipekit import losses
from recipekit.cli import main as cli
from recipekit.gradcheck import (
    AuditResult,
    LOSS_TOL,
    audit_arcface,
    audit_ce,
    audit_triplet,
    rel_error,
)
from recipekit.losses import LossOutput


def _perturbed(fn, key):
    def wrapped(*args, **kwargs):
        out = fn(*args, **kwargs)
        grads = dict(out.grads)
        grads[key] = grads[key] * 1.01
        return LossOutput(out.value, grads, out.aux)
    return wrapped


def test_rel_error_definition():
    assert rel_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert rel_error([3.0, 4.0], [0.0, 0.0]) == 1.0
    assert rel_error([0.0], [0.0]) == 0.0


def test_negative_controls_fail():
    rng = np.random.default_rng(0)
    assert not audit_ce(rng, 5, ce=_perturbed(losses.ce_smoothed, "logits")).passed
    assert not audit_triplet(rng, 5, fn=_perturbed(losses.batch_hard_triplet, "embeddings")).passed
    assert not audit_arcface(rng, 5, fn=_perturbed(losses.arcface_loss, "weight")).passed


def test_positive_controls_pass():
    rng = np.random.default_rng(1)
    for r in (audit_ce(rng, 5), audit_triplet(rng, 5), audit_arcface(rng, 5)):
        assert r.passed and r.worst < LOSS_TOL


def test_cli_exit_codes(monkeypatch, capsys):
    assert cli.main(["grad-check", "--points", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6

    def failing(seed, points):
        return [AuditResult("broken", 0.5, 1e-4, points)]

    monkeypatch.setattr("recipekit.gradcheck.run_audits", failing)
    assert cli.main(["grad-check", "--points", "2"]) == 1
    assert "FAIL broken" in capsys.readouterr().out
