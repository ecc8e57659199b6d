# Define the types
from typing import Literal

Activation = Literal["swish", "sigmoid", "tanh", "identity"]

OutputName = Literal["u_x", "u_y", "sigma_xx", "sigma_yy", "sigma_xy"]

Edge = Literal["left", "right", "bottom", "top"]

Orientation = Literal["horizontal", "vertical"]

Provenance = Literal["regular", "random", "adaptive", "combined"]

Termination = Literal["grad_tol", "step_tol", "max_iters", "line_search_fail"]

Problem = Literal["homogeneous", "single_inclusion", "voxel"]

Method = Literal["PINN", "CPINN", "AdaPINN", "AdaCPINN"]

ExportFormat = Literal["csv", "vtk"]

SigmaXyRule = Literal["printed", "all_edges"]

WorkQuadrature = Literal["printed", "consistent"]
