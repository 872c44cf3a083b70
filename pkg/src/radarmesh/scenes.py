"""Scene corruption profiles emulating adverse capture conditions.

Each profile is a pure parameter bundle; all randomness comes from the rng
passed to the sensor functions, so reruns with the same seed are bitwise
identical. Severities are emulation knobs chosen to be monotone with the
condition they mimic, not calibrated sensor statistics.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CorruptionProfile:
    image_brightness_scale: float = 1.0
    image_noise_sigma: float = 0.0
    image_blur_radius: int = 0
    image_contrast_scale: float = 1.0
    streak_count: int = 0
    occluder_rect: float = 0.0        # fraction of image area
    point_noise_sigma: float = 0.0    # meters
    segment_dropout_prob: float = 0.0
    outlier_fraction: float = 0.0
    outlier_box: float = 2.0          # meters, cube side around the body

    def __post_init__(self):
        for name in ("occluder_rect", "segment_dropout_prob", "outlier_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        for name in ("image_noise_sigma", "point_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


SCENES: dict[str, CorruptionProfile] = {
    "lab": CorruptionProfile(),
    "rain": CorruptionProfile(image_noise_sigma=0.08, streak_count=8),
    "smoke": CorruptionProfile(image_blur_radius=2, image_contrast_scale=0.5,
                               segment_dropout_prob=0.2),
    "poor_lighting": CorruptionProfile(image_brightness_scale=0.05, image_noise_sigma=0.02),
    "occlusion": CorruptionProfile(occluder_rect=0.35, outlier_fraction=0.05),
}

SCENE_ORDER = ["lab", "rain", "smoke", "poor_lighting", "occlusion"]
BASIC_SCENES = ["lab"]
ADVERSE_SCENES = ["rain", "smoke", "poor_lighting", "occlusion"]


def scene_profile(name: str) -> CorruptionProfile:
    try:
        return SCENES[name]
    except KeyError:
        raise ValueError(f"unknown scene '{name}' (known: {', '.join(SCENE_ORDER)})") from None
