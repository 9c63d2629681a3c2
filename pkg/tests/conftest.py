"""Shared draw helpers for randomized checks."""

import numpy as np

from diqkd import (
    ChannelModel,
    DisplacementSetting,
    MeasurementSettings,
    OnePhotonParams,
    TwoPhotonParams,
)


def random_settings(rng, mag_max=1.5):
    def ds(gauge=False):
        mag = float(rng.uniform(0.05, mag_max))
        phase = 0.0 if gauge else float(rng.uniform(0.0, 2.0 * np.pi))
        return DisplacementSetting(mag, phase)

    return MeasurementSettings(alice=(ds(gauge=True), ds()), bob=(ds(), ds(), ds()))


def random_1ph(rng):
    return OnePhotonParams(
        g=float(rng.uniform(0.05, 0.3)),
        channel=ChannelModel.from_r_t(float(rng.uniform(0.0, 0.9))),
        eta_c=float(rng.uniform(0.7, 1.0)),
    )


def random_2ph(rng):
    return TwoPhotonParams(
        g_a=float(rng.uniform(0.05, 0.3)),
        t_s=float(rng.uniform(0.2, 0.8)),
        g_b=float(rng.uniform(0.05, 0.3)),
        eta_s=float(rng.uniform(0.7, 1.0)),
        channel=ChannelModel.from_r_t(float(rng.uniform(0.0, 0.9))),
        eta_c=float(rng.uniform(0.7, 1.0)),
    )
