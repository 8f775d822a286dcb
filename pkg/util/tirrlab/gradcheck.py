# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import logging as log
from typing import NamedTuple

import numpy as np
import torch


class GradcheckResult(NamedTuple):
    n_coords: int
    max_rel_error: float
    worst: str


def relative_error(analytic, numeric, floor=1e-4):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn, named_params, n_coords=100, eps=1e-6, seed=0):
    """
    Compare autograd gradients of the scalar `loss_fn()` against central
    differences on `n_coords` randomly chosen parameter coordinates.
    `named_params` should be float64 tensors that require gradients.
    """
    named_params = list(named_params)
    params = [p for _, p in named_params]
    analytic = torch.autograd.grad(loss_fn(), params)

    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(offsets[-1], size=min(n_coords, offsets[-1]), replace=False)

    worst, worst_err = "", 0.0
    with torch.no_grad():
        for c in sorted(int(c) for c in coords):
            k = int(np.searchsorted(offsets, c, side="right")) - 1
            name, flat = named_params[k][0], params[k].view(-1)
            i = c - offsets[k]
            orig = float(flat[i])
            flat[i] = orig + eps
            f_plus = float(loss_fn())
            flat[i] = orig - eps
            f_minus = float(loss_fn())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = relative_error(float(analytic[k].reshape(-1)[i]), numeric)
            if err > worst_err:
                worst, worst_err = "{}[{}]".format(name, i), err
    log.debug("Gradient check: worst relative error %.3g at %s", worst_err, worst)
    return GradcheckResult(len(coords), worst_err, worst)
