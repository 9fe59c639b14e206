"""Channel models of the worked examples.

Budgets follow ``10 ** (snr_db / 10)`` with unit noise power.
"""

from __future__ import annotations

from .channel import ChannelModel

PRESETS = ("example1", "example2", "example3", "example2-bayes")


def snr_to_budget(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def example1(snr_db: float = 0.0) -> ChannelModel:
    return ChannelModel.symmetric(3, [0.3, 1.0], [0.2, 0.1], snr_to_budget(snr_db))


def example2(snr_db: float = 0.0) -> ChannelModel:
    return ChannelModel.symmetric(3, [0.3, 1.0], [0.1, 0.5], snr_to_budget(snr_db))


def example3(snr_db: float = 0.0) -> ChannelModel:
    direct = [0.1, 0.5, 1.0]
    cross = [0.25, 0.5, 0.75]
    uniform = [1 / 3] * 3
    user2 = [0.1, 0.4, 0.5]
    return ChannelModel(
        direct_support=(direct, direct),
        direct_probs=(uniform, user2),
        cross_support=((None, cross), (cross, None)),
        cross_probs=((None, uniform), (user2, None)),
        budgets=snr_to_budget(snr_db),
    )


def example2_bayes(snr_db: float = 0.0) -> ChannelModel:
    return ChannelModel.symmetric(3, [0.3, 1.0], [0.5, 0.1], snr_to_budget(snr_db))


def preset(name: str, snr_db: float = 0.0) -> ChannelModel:
    builders = {"example1": example1, "example2": example2, "example3": example3,
                "example2-bayes": example2_bayes}
    try:
        return builders[name](snr_db)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}") from None
