# constants

APPLICATION_NAME = "microelast"
LOG_ENV_VAR = "MICROELAST_LOG"

SNAPSHOT_MAGIC = b"MELSNAP\x00"
SNAPSHOT_VERSION = 1

OUTPUT_NAMES = ("u_x", "u_y", "sigma_xx", "sigma_yy", "sigma_xy")
EDGE_NAMES = ("left", "right", "bottom", "top")

# Channel order of a field export
FIELD_CHANNELS = (
    "u_x",
    "u_y",
    "sigma_xx",
    "sigma_yy",
    "sigma_xy",
    "W_int",
    "R",
    "R_div_x",
    "R_div_y",
    "R_const_xx",
    "R_const_yy",
    "R_const_xy",
)

# Wolfe constants, standard textbook values
WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9

# Curvature pairs with s.y below this (relative) are skipped
CURVATURE_EPS = 1e-14

# Points this close to the domain edge are clamped instead of rejected
DOMAIN_TOLERANCE = 1e-9


class Colors:
    """ANSI colours for terminal output"""

    INFO = "\033[94m"
    OKGREEN = "\033[92m"
    WARNING = "\033[93m"
    ERROR = "\033[91m"
    BOLD = "\033[1m"
    UNDERLINE = "\033[4m"
    RESET = "\033[0m"


# Default experiment configuration, user sections are merged over it
DEFAULT_CONFIG = {
    "length": 2.0,
    "sigma_bar": 0.025,
    "sigma_xy_rule": "printed",
    "work_quadrature": "printed",
    "seed": 0,
    "output_dir": "runs",
    "format": "csv",
    "threads": None,
    "topology": {
        "n_layers": 4,
        "units_per_layer": 64,
        "activation": "swish",
        "beta": 1.0,
        "param_budget": None,
    },
    "split": {
        "n_x": 1,
        "n_y": 1,
        "psi": 20.0,
        "interface_full": False,
    },
    "sampling": {
        "mode": "regular",
        "n_per_side": 128,
        "n_boundary": None,
        "adaptive": None,
    },
    "optimizer": {
        "max_iters": 500,
        "grad_tol": 1e-9,
        "step_tol": 1e-12,
        "wolfe_c1": WOLFE_C1,
        "wolfe_c2": WOLFE_C2,
    },
    "material": {
        "constant": {"E": 1.0e4, "nu": 0.4},
        "inclusion": {"E": 1.0e4, "nu": 0.4},
        "matrix": {"E": 1.5e3, "nu": 0.4},
        "delta": 0.02,
        "radius": 0.4,
        "image": None,
    },
    "scales": None,
    "evaluation": {
        "n_per_side": 128,
    },
    "study": None,
}

DEFAULT_ADAPTIVE = {
    "n_fine": 1,
    "n_iter": 1,
    "gamma": 2.2,
    "n_rand": None,
    "alpha": 1.0,
    "fine_iters": 250,
    "cycle_iters": 250,
}

DEFAULT_IMAGE = {
    "path": None,
    "synthetic": {
        "width": 64,
        "height": 64,
        "n_fibers": 12,
        "fiber_length": 20.0,
        "fiber_width": 3.0,
        "noise": 0.15,
    },
    "sigma_px": 1.0,
    "threshold": 0.5,
    "network": {
        "n_layers": 20,
        "units_per_layer": 15,
        "activation": "tanh",
        "beta": 1.0,
        "param_budget": None,
    },
    "max_iters": 300,
}

DEFAULT_STUDY = {
    "kind": "convergence",
    "methods": ["PINN", "CPINN"],
    "budgets": [8, 16, 32, 64, 128],
    "splits": [1, 2, 3, 4, 5],
    "param_budget": 13000,
}
