from .distributions import (CategoricalDist, DimensionError, DirichletParams, DomainError,
                            GaussianParams, GaussianStats, NiwParams, entropy, is_spd,
                            kl_divergence, log_density, niw_expected_gaussian,
                            niw_log_predictive, normalize_log, posterior_update,
                            symmetric_kl, total_variation)
from .free_energy import elbo, free_energy, log_evidence, table_log_prob
from .graph import (Edge, EdgeKind, GraphicalModel, ModelError, Node, NodeKind, Support,
                    ValidationReport, generative_cycles, model_from_edges, to_dot, unroll,
                    validate_acyclic)
