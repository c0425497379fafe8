"""Central-difference gradient checks for every op, loss and network."""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from radsmith.models.schemas import DenoiserSpec, DiscriminatorSpec, GradCheckReport, LossWeights, SRSpec
from radsmith.services import autodiff as ad
from radsmith.services.autodiff import Module, Tensor
from radsmith.services.networks import Denoiser, Discriminator, RCABlock, SRNet, randomize_parameters
from radsmith.services.training import composite_loss

logger = logging.getLogger(__name__)

OP_EPS = 1e-3
# networks contain relu kinks, so they are checked with a smaller step
NETWORK_EPS = 1e-5
MAX_ELEMENTS = 48

Case = Tuple[str, Callable[..., Tensor], List[Tensor], float]


def _leaf(rng: np.random.Generator, shape, name: str, away_from_zero: bool = False, unit: bool = False) -> Tensor:
    if unit:
        data = rng.uniform(0.05, 0.95, size=shape)
    else:
        data = rng.standard_normal(shape)
        if away_from_zero:
            data = data + 0.2 * np.sign(data)
    return Tensor(data, requires_grad=True, name=name)


def _apart(rng: np.random.Generator, base: Tensor, name: str) -> Tensor:
    """A target differing from `base` by at least 0.05 everywhere (keeps |pred - target| off its kink)"""
    offset = rng.uniform(0.05, 0.2, size=base.shape) * rng.choice([-1.0, 1.0], size=base.shape)
    return Tensor(base.data + offset, requires_grad=True, name=name)


def _module_case(name: str, module: Module, x: Tensor, rng: np.random.Generator) -> Case:
    randomize_parameters(module, rng)
    params = []
    for pname, p in module.named_parameters():
        p.name = pname
        params.append(p)
    return name, (lambda inp, *_: module(inp)), [x] + params, NETWORK_EPS


def op_cases(rng: np.random.Generator) -> List[Case]:
    def leaf(shape, name, **kw):
        return _leaf(rng, shape, name, **kw)

    labels = rng.random((4, 1)).round()
    l1_pred = leaf((2, 1, 6, 6), "pred")
    mix_pred = leaf((1, 1, 12, 12), "pred", unit=True)

    def dropout_op(x):
        return ad.dropout(x, 0.3, np.random.default_rng(7), training=True)

    return [
        ("conv2d", lambda x, w, b: ad.conv2d(x, w, b),
         [leaf((1, 2, 5, 5), "x"), leaf((3, 2, 3, 3), "w"), leaf((3,), "b")], OP_EPS),
        ("conv2d_stride2", lambda x, w, b: ad.conv2d(x, w, b, stride=2),
         [leaf((2, 2, 6, 6), "x"), leaf((2, 2, 3, 3), "w"), leaf((2,), "b")], OP_EPS),
        ("relu", ad.relu, [leaf((2, 3, 4, 4), "x", away_from_zero=True)], OP_EPS),
        ("leaky_relu", ad.leaky_relu, [leaf((2, 3, 4, 4), "x", away_from_zero=True)], OP_EPS),
        ("sigmoid", ad.sigmoid, [leaf((2, 3, 4, 4), "x")], OP_EPS),
        ("add", ad.add, [leaf((2, 3, 4, 4), "a"), leaf((2, 3, 4, 4), "b")], OP_EPS),
        ("mul", ad.mul, [leaf((2, 3, 4, 4), "a"), leaf((2, 3, 4, 4), "b")], OP_EPS),
        ("mul_broadcast", ad.mul, [leaf((2, 3, 4, 4), "a"), leaf((2, 3, 1, 1), "b")], OP_EPS),
        ("global_avg_pool", ad.global_avg_pool, [leaf((2, 3, 4, 5), "x")], OP_EPS),
        ("pixel_shuffle", lambda x: ad.pixel_shuffle(x, 2), [leaf((1, 8, 3, 3), "x")], OP_EPS),
        ("pixel_unshuffle", lambda x: ad.pixel_unshuffle(x, 2), [leaf((1, 2, 4, 6), "x")], OP_EPS),
        ("resize_up", lambda x: ad.resize(x, 12, 10), [leaf((1, 1, 6, 5), "x")], OP_EPS),
        ("resize_down", lambda x: ad.resize(x, 4, 3), [leaf((1, 2, 8, 6), "x")], OP_EPS),
        ("linear", ad.linear, [leaf((3, 5), "x"), leaf((2, 5), "w"), leaf((2,), "b")], OP_EPS),
        ("flatten", ad.flatten, [leaf((2, 3, 2, 2), "x")], OP_EPS),
        ("dropout", dropout_op, [leaf((2, 3, 4, 4), "x")], OP_EPS),
        ("l1_loss", ad.l1_loss, [l1_pred, _apart(rng, l1_pred, "target")], OP_EPS),
        ("ssim_loss", ad.ssim_loss,
         [leaf((2, 1, 13, 14), "pred", unit=True), leaf((2, 1, 13, 14), "target", unit=True)], OP_EPS),
        ("bce_with_logits", lambda z: ad.bce_with_logits(z, labels),
         [leaf((4, 1), "logit")], OP_EPS),
        ("composite_loss", lambda p, t: composite_loss(p, t, LossWeights()),
         [mix_pred, _apart(rng, mix_pred, "target")], OP_EPS),
    ]


def network_cases(rng: np.random.Generator) -> List[Case]:
    def image(shape):
        return Tensor(rng.uniform(0.0, 1.0, size=shape), requires_grad=True, name="x")

    features = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True, name="x")
    features_se = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True, name="x")
    return [
        _module_case("rca_block_spatial_eq4", RCABlock(3, "spatial_eq4", rng), features, rng),
        _module_case("rca_block_channel_se", RCABlock(3, "channel_se", rng), features_se, rng),
        _module_case("denoiser", Denoiser(DenoiserSpec(n_rca_blocks=2, channels=3), rng), image((1, 1, 8, 8)), rng),
        _module_case("denoiser_channel_se",
                     Denoiser(DenoiserSpec(n_rca_blocks=2, channels=3, attention_mode="channel_se"), rng),
                     image((1, 1, 8, 8)), rng),
        _module_case("denoiser_dncnn", Denoiser(DenoiserSpec(n_rca_blocks=2, channels=3, block_type="dncnn"), rng),
                     image((1, 1, 8, 8)), rng),
        _module_case("sr_net", SRNet(SRSpec(n_res_blocks=2, channels=4, scale=2), rng), image((1, 1, 6, 6)), rng),
        _module_case("sr_net_x4", SRNet(SRSpec(n_res_blocks=1, channels=2, scale=4), rng), image((1, 1, 4, 4)), rng),
        _module_case("discriminator", Discriminator(DiscriminatorSpec(n_layers=2, base_channels=3), rng),
                     image((2, 1, 8, 8)), rng),
    ]


def run_suite(seed: int = 0, tol: float = 1e-4, cases: Optional[Sequence[Case]] = None) -> List[GradCheckReport]:
    """Every op and network case, each reduced to a scalar by a fixed random projection"""
    rng = np.random.default_rng(seed)
    if cases is None:
        cases = op_cases(rng) + network_cases(rng)
    reports = []
    for name, op, inputs, eps in cases:
        report = ad.grad_check(op, inputs, tol=tol, eps=eps, max_elements=MAX_ELEMENTS,
                               rng=np.random.default_rng(seed), name=name)
        level = logging.INFO if report.passed else logging.WARNING
        logger.log(level, "%-24s max rel err %.2e (%s)", name, report.max_rel_error,
                   "ok" if report.passed else "FAILED")
        reports.append(report)
    return reports
