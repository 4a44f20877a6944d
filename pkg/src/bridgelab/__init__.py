"""Synthetic DAG reasoning corpora, behavior injection and RL-readiness analytics."""
from __future__ import annotations

__version__ = "0.1.0"

from .behaviors import (InjectConfig, bridge_augment, cot_problems, inject_analysis,
                        inject_reflection, inject_subgoals, pp_aug, rc_aug, rejection_filter,
                        verify_cot)
from .cot import (CotStep, ExtractionError, Task, TemplateError, eval_link, extract_dag,
                  parse_model_output, render_answer, render_cot, render_query, render_sft_record)
from .dag import (CycleError, Dag, Expr, Node, OverflowReject, classify_roles, evaluate,
                  locked_nodes, op_count, redundancy, topo_sort, validate)
from .igsm import GenerationError, IgsmConfig, IgsmWorld, default_world, generate_igsm
from .influence import (GradVector, ProjectionSpec, coinfluence, grouped_influence_report,
                        project, project_many)
from .objective import (GrpoConfig, RolloutGroup, closed_form_advantages, dapo_query_filter,
                        group_advantages, info_coefficient, outcome_reward, per_step_influence,
                        raw_influence, taylor_influence_check)
from .promptbench import PbConfig, generate_pb
