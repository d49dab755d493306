from .finite import (
    FiniteLogisticProblem,
    FiniteQuadraticProblem,
    FiniteSupportProblem,
    ball_loss_scale,
    conflicting_task,
    finite_logistic_task,
    label_skew_task,
    logistic_loss_and_gradient,
    quadratic_task,
    two_point_conflict_task,
)
