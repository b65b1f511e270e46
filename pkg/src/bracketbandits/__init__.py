"""Anytime pure-exploration bandits over randomly drawn arm brackets."""
from __future__ import annotations

__version__ = "0.1.0"

from .confidence import ConfidenceSchedule, invert_radius, radius, radius_vec, reg_log  # noqa: F401
from .instance import (  # noqa: F401
    BanditInstance,
    bernoulli_instance,
    gaussian_instance,
    hardness_report,
    load_instance,
    save_instance,
    summarize,
    two_spike,
)
from .engine import Engine  # noqa: F401
from .lucb import CombinedRun, LucbRun  # noqa: F401
from .harness import (  # noqa: F401
    RunConfig,
    load_campaign_file,
    run_campaign,
    run_trial,
    write_campaign_outputs,
)
