"""Prior and denoiser networks"""
from src.nets.prior_net import PriorArch, PriorNet, UniformPrior, prior_forward
from src.nets.denoiser_net import AuxLogits, DenoiserArch, DenoiserNet, denoiser_forward


def freeze(net):
    """Freeze a trained prior; later backward passes leave it bit-identical"""
    return net.freeze()


__all__ = [
    "PriorArch",
    "PriorNet",
    "UniformPrior",
    "prior_forward",
    "AuxLogits",
    "DenoiserArch",
    "DenoiserNet",
    "denoiser_forward",
    "freeze",
]
