from .amo import amo_cocycle, amo_generator, amo_normal_frame, amo_nu
from .embed import (EmbeddingResult, EmbedDivergenceError, PreconditionError, ResonanceSites,
                    apply_L, h_eval, invert_L, local_embed, select_ktilde)
from .families import AmoEmbedded, GenericQuadratic, OutOfIntervalError, SchrodingerFlow, regularity
from .sweep import (GapAmbiguityError, GapRecord, SweepCurve, audit_edges, detect_gaps,
                    fd_gap_occupancy, fd_spectrum, gap_lyapunov_consistent, kam_rho,
                    label_table, measure_check, monotonicity_violations, predicted_edges,
                    refined_grid, sweep)
