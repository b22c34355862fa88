"""Finite-difference suites for the autodiff engine and the meta objective.

Each check is a scalar function of a few small parameter tensors. A check
passes when reverse-mode gradients agree with central differences (see
:func:`urtf.autodiff.finite_diff_check`). Second-order variants
differentiate ``<grad f, v>`` for a fixed random ``v``, which exercises the
vector-Jacobian rules when they are themselves recorded on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, constant, finite_diff_check, grad

DEFAULT_EPSILON = 1e-5
DEFAULT_TOLERANCE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable[[ParamStore], Tensor], ParamStore]]:
    """One scalar test function per primitive, with its inputs.

    Outputs are reduced to a scalar by a fixed random weighting.
    """
    rng = np.random.default_rng(seed)

    def store(**shapes):
        return ParamStore.from_arrays({k: rng.normal(size=s) for k, s in shapes.items()})

    def case(fn, **shapes):
        params = store(**shapes)
        weights = constant(rng.normal(size=fn(params).shape))
        return (lambda p: ad.sum(ad.mul(fn(p), weights))), params

    idx3 = rng.integers(0, 4, size=3)
    ids = np.array([0, 2, 2, 1, 4])
    return {
        "add": case(lambda p: ad.add(p["a"], p["b"]), a=(2, 3), b=(2, 3)),
        "sub": case(lambda p: ad.sub(p["a"], p["b"]), a=(2, 3), b=(2, 3)),
        "mul": case(lambda p: ad.mul(p["a"], p["b"]), a=(2, 3), b=(2, 3)),
        "neg": case(lambda p: ad.neg(p["a"]), a=(3,)),
        "scale": case(lambda p: ad.scale(p["a"], -1.7), a=(2, 2)),
        "exp": case(lambda p: ad.exp(p["a"]), a=(2, 3)),
        "reshape": case(lambda p: ad.reshape(p["a"], (3, 2)), a=(2, 3)),
        "matmul": case(lambda p: ad.matmul(p["a"], p["b"]), a=(2, 3), b=(3, 2)),
        "transpose": case(lambda p: ad.transpose(p["a"]), a=(2, 3)),
        "sum": case(lambda p: ad.sum(p["a"]), a=(2, 3)),
        "mean": case(lambda p: ad.mean(p["a"]), a=(2, 3)),
        "fill": case(lambda p: ad.fill(ad.sum(p["a"]), (2, 2)), a=(2,)),
        "row_sum": case(lambda p: ad.row_sum(p["a"]), a=(3, 4)),
        "tile_cols": case(lambda p: ad.tile_cols(p["a"], 3), a=(2, 1)),
        "log_softmax": case(lambda p: ad.log_softmax(p["a"]), a=(3, 4)),
        "gather": case(lambda p: ad.gather(p["a"], idx3), a=(3, 4)),
        "scatter": case(lambda p: ad.scatter(p["a"], idx3, 4), a=(3,)),
        "embedding_lookup": case(lambda p: ad.embedding_lookup(p["a"], ids), a=(5, 2)),
        "scatter_rows": case(lambda p: ad.scatter_rows(p["a"], ids, 6), a=(5, 2)),
        "concat_cols": case(lambda p: ad.concat_cols(p["a"], p["b"]), a=(2, 3), b=(2, 1)),
        "slice_cols": case(lambda p: ad.slice_cols(p["a"], 1, 3), a=(2, 4)),
        "pad_cols": case(lambda p: ad.pad_cols(p["a"], 1, 4), a=(2, 2)),
        "cross_entropy": case(lambda p: ad.cross_entropy(p["a"], idx3), a=(3, 4)),
    }


def second_order(f: Callable[[ParamStore], Tensor], params: ParamStore, seed: int = 0):
    """``p -> <grad f(p), v>`` recorded so it can be differentiated again."""
    rng = np.random.default_rng(seed)
    v = {k: constant(rng.normal(size=t.shape)) for k, t in params.items()}

    def h(p):
        g = grad(f(p), p, higher_order=True)
        terms = [ad.sum(ad.mul(g[k], v[k])) for k in p]
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out

    return h


def quadratic_maml_error(alpha: float = 0.1, dim: int = 5, seed: int = 0) -> float:
    """Max abs deviation of the second-order meta-gradient from its closed form.

    With inner loss ``|t - a|^2`` and query loss ``|t - b|^2`` one inner step
    gives ``t1 = t - 2 alpha (t - a)`` and the meta-gradient
    ``(1 - 2 alpha) * 2 (t1 - b)``.
    """
    from .metatrain import MetaConfig, maml_gradient

    rng = np.random.default_rng(seed)
    a, b, t = (rng.normal(size=(1, dim)) for _ in range(3))
    params = ParamStore.from_arrays({"t": t})

    def sq(p, target):
        d = ad.sub(p["t"], constant(target))
        return ad.sum(ad.mul(d, d))

    cfg = MetaConfig(alpha=alpha, mode="second_order")
    grads, _ = maml_gradient(params, lambda p: sq(p, a), lambda p: sq(p, b), cfg)
    t1 = t - 2 * alpha * (t - a)
    expected = (1 - 2 * alpha) * 2 * (t1 - b)
    return float(np.max(np.abs(grads["t"].data - expected)))


def shrunken_outer_case(mode: str = "second_order", alpha: float = 0.3, seed: int = 0):
    """Full outer objective of a 26-parameter model on a hand-made task."""
    from .metatrain import (
        EncodedTask,
        HalfExamples,
        MetaConfig,
        ToyModel,
        Vocab,
        make_example,
        outer_loss,
    )

    rng = np.random.default_rng(seed)
    vocab = Vocab(("<bos>", "<eos>", "(", ")", "A", "w"))
    v = len(vocab)
    arrays = {
        "embedding": rng.normal(size=(v, 1)),
        "position": rng.normal(size=(2, 1)),
        "decoder_weights": rng.normal(size=(2, v)),
        "decoder_bias": rng.normal(size=(1, v)),
    }
    model = ToyModel(vocab, ParamStore.from_arrays(arrays), d=1, max_pos=2)

    def ex(x, y):
        return make_example(vocab, x.split(), y.split())

    enc = EncodedTask(
        HalfExamples(ex("A w", "( A w )"), ex("A w ( A", "( A )")),
        HalfExamples(ex("w w", "( w )"), ex("A A w", "A")),
        ex("w A", "A w"),
        ex("w", "( A )"),
    )
    cfg = MetaConfig(mode=mode, alpha=alpha)
    return (lambda p: outer_loss(p, enc, cfg, model.max_pos)[0]), model.params


def run_suite(
    epsilon: float = DEFAULT_EPSILON, tolerance: float = DEFAULT_TOLERANCE, seed: int = 0
) -> list[CheckResult]:
    results = []
    for name, (f, params) in primitive_cases(seed).items():
        results.append(CheckResult(name, finite_diff_check(f, params, epsilon), tolerance))
        h = second_order(f, params, seed)
        results.append(CheckResult(f"{name} (2nd)", finite_diff_check(h, params, epsilon), tolerance))
    for mode in ("second_order", "simple"):
        f, params = shrunken_outer_case(mode, seed=seed)
        results.append(CheckResult(f"outer loss ({mode})", finite_diff_check(f, params, epsilon), tolerance))
    results.append(CheckResult("quadratic maml closed form", quadratic_maml_error(seed=seed), 1e-8))
    return results
