"""
Monte-Carlo sweeps behind the ``eval``, ``predict``, ``overhead`` and
``sumrate`` commands. Every sweep is split into independent cells keyed by the
swept value; each cell draws from ``rng.child(cell index)`` and rows come back
in key order, so output is identical for any thread count.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import analytics
from .channel_sim import gen_episode, gen_stream
from .errors import IllConditionedCorrectionError, InvalidInputError
from .numerics import Rng, sample_cn
from .pilots import (direct_plan, estimate_cascaded_direct, genie_ls_G, genie_ls_h, nmse, perturb_g1,
                     run_stages, synth_plan_rx)
from .pipeline import correct_scaling, predict_online
from .runner import flatten, run_cells
from .schemas import SweepConfig, SystemConfig, TrainingHyper
from .sclstm import SclstmParams, predict_window
from .training import build_dataset, train

logger = logging.getLogger(__name__)

ESTIMATION_COLUMNS = ["snr_db", "quantity", "nmse", "nmse_db", "pilot_slots", "trials"]
T_COLUMNS = ["t", "nmse", "nmse_db", "nmse_refined", "trials"]
N_COLUMNS = ["N", "quantity", "nmse", "nmse_db", "pilot_slots", "trials"]
WINDOW_COLUMNS = ["S", "nmse", "nmse_db", "best_epoch", "trials"]
G1_COLUMNS = ["g1_nmse", "quantity", "nmse", "nmse_db", "trials"]
RATE_COLUMNS = ["T_S", "tau", "method", "lambda_d", "sum_rate", "feasible", "trials"]


def to_db(value: float) -> float:
    return 10.0 * math.log10(value) if value > 0 and math.isfinite(value) else math.nan


def _summary(values: Dict[str, List[float]]) -> Dict[str, float]:
    return {q: float(np.mean(v)) if v else math.nan for q, v in values.items()}


def prediction_trial(params: SclstmParams, cfg: SystemConfig, rng: Rng):
    """One trial: stage 1-2 on steps 1..S, predict S+1, compare against the truth."""
    ep = gen_episode(cfg, cfg.S + 1, rng.child(0))
    report = run_stages(cfg, ep, tuple(range(1, cfg.S + 1)), rng.child(1))
    fw = predict_window(params, report.H_hat)
    target = ep.cascaded(cfg.S + 1)
    out = {
        "H_pred": nmse(fw.H_tilde[0], target),
        "H_stage2": nmse(report.H_hat, ep.H[:, :cfg.S]),
        "G_genie_ls": nmse(genie_ls_G(report.H_hat, ep.h[:, :cfg.S]), ep.G),
        "h_genie_ls": nmse(genie_ls_h(report.H_hat, ep.G), ep.h[:, :cfg.S]),
    }
    try:
        G_hat, h_hat = correct_scaling(fw.G_tilde[0], fw.h_tilde[0], report.g1_hat)
        out["G_pred"] = nmse(G_hat, ep.G)
        out["h_pred"] = nmse(h_hat, ep.ris_ue(cfg.S + 1))
    except IllConditionedCorrectionError as e:
        logger.warning("scaling correction skipped: %s", e)
    return out, report.pilot_slots


def eval_snr(cfg: SystemConfig, hyper: TrainingHyper, sweep: SweepConfig, rng: Rng, threads: Optional[int] = None,
             models: Optional[Sequence[SclstmParams]] = None) -> List[dict]:
    """
    Prediction, stage-2 and genie-aided LS NMSE versus SNR.

    Every SNR point gets its own model: ``models[i]`` when given, otherwise one
    trained on a dataset whose inputs are estimated at that SNR.
    """
    if models is not None and len(models) != len(sweep.snr_db):
        raise InvalidInputError(f"{len(models)} models for {len(sweep.snr_db)} SNR points")

    def cell(i):
        snr = sweep.snr_db[i]
        c = cfg.with_snr(snr)
        if models is not None:
            params = models[i]
        else:
            result = train(build_dataset(c, hyper, rng.child(i, 0)), hyper, rng.child(i, 1))
            params = result.params
            logger.info("SNR %g dB: model from epoch %d", snr, result.best_epoch)
        acc: Dict[str, List[float]] = {q: [] for q in ("H_pred", "G_pred", "h_pred", "H_stage2",
                                                       "G_genie_ls", "h_genie_ls")}
        slots = 0
        for trial in range(sweep.trials):
            errs, slots = prediction_trial(params, c, rng.child(i, 2, trial))
            for q, v in errs.items():
                acc[q].append(v)
        return [{"snr_db": snr, "quantity": q, "nmse": v, "nmse_db": to_db(v), "pilot_slots": slots,
                 "trials": sweep.trials} for q, v in _summary(acc).items()]
    return flatten(run_cells(cell, range(len(sweep.snr_db)), threads))


def eval_ris_size(cfg: SystemConfig, sweep: SweepConfig, rng: Rng, threads: Optional[int] = None) -> List[dict]:
    """Stage-2 estimation NMSE versus the number of RIS elements."""
    def cell(i):
        n = sweep.ris_sizes[i]
        c = SystemConfig.for_ris_size(n, **cfg.model_dump(exclude={"Nx", "Ny"}))
        acc: Dict[str, List[float]] = {"H_stage2": [], "G_stage2": []}
        slots = 0
        for trial in range(sweep.trials):
            r = rng.child(i, trial)
            ep = gen_episode(c, c.S + 1, r.child(0))
            report = run_stages(c, ep, tuple(range(1, c.S + 1)), r.child(1))
            acc["H_stage2"].append(nmse(report.H_hat, ep.H[:, :c.S]))
            if report.G_hat is not None:
                acc["G_stage2"].append(nmse(report.G_hat, ep.G))
            slots = report.pilot_slots
        return [{"N": n, "quantity": q, "nmse": v, "nmse_db": to_db(v), "pilot_slots": slots,
                 "trials": sweep.trials} for q, v in _summary(acc).items()]
    return flatten(run_cells(cell, range(len(sweep.ris_sizes)), threads))


def eval_g1_error(params: SclstmParams, cfg: SystemConfig, sweep: SweepConfig, rng: Rng,
                  threads: Optional[int] = None) -> List[dict]:
    """NMSE of the corrected G and h when g1 carries a controlled error."""
    def cell(i):
        target = sweep.g1_errors[i]
        acc: Dict[str, List[float]] = {"G_pred": [], "h_pred": [], "H_pred": []}
        for trial in range(sweep.trials):
            r = rng.child(i, trial)
            ep = gen_episode(cfg, cfg.S + 1, r.child(0))
            g1 = perturb_g1(ep.G[0], target, r.child(2))
            report = run_stages(cfg, ep, tuple(range(1, cfg.S + 1)), r.child(1), g1_override=g1)
            fw = predict_window(params, report.H_hat)
            acc["H_pred"].append(nmse(fw.H_tilde[0], ep.cascaded(cfg.S + 1)))
            try:
                G_hat, h_hat = correct_scaling(fw.G_tilde[0], fw.h_tilde[0], g1)
            except IllConditionedCorrectionError as e:
                logger.warning("scaling correction skipped: %s", e)
                continue
            acc["G_pred"].append(nmse(G_hat, ep.G))
            acc["h_pred"].append(nmse(h_hat, ep.ris_ue(cfg.S + 1)))
        return [{"g1_nmse": target, "quantity": q, "nmse": v, "nmse_db": to_db(v), "trials": sweep.trials}
                for q, v in _summary(acc).items()]
    return flatten(run_cells(cell, range(len(sweep.g1_errors)), threads))


def eval_over_time(params: SclstmParams, cfg: SystemConfig, sweep: SweepConfig, rng: Rng,
                   threads: Optional[int] = None) -> List[dict]:
    """Trial-averaged online prediction NMSE at every step t of a T_C trace."""
    def cell(trial):
        r = rng.child(trial)
        blocks = gen_stream(cfg, sweep.T_C, sweep.T_L, r.child(0))
        trace = predict_online(params, blocks, cfg, sweep.T_C, sweep.T_L, r.child(1), g1_source=sweep.g1_source,
                               g1_nmse=sweep.g1_nmse, stage2_source=sweep.stage2_source, refine=sweep.refine,
                               data_symbols=sweep.data_symbols, reflection=sweep.reflection)
        df = trace.to_frame()
        df = df[df["source"] == "predicted"]
        return df.groupby("t")[["nmse_H", "nmse_refined"]].mean().reset_index().to_dict("records")

    merged = run_cells(cell, range(sweep.trials), threads)
    per_t: Dict[int, List[dict]] = {}
    for rows in merged.values():
        for row in rows:
            per_t.setdefault(int(row["t"]), []).append(row)
    out = []
    for t in sorted(per_t):
        v = float(np.mean([r["nmse_H"] for r in per_t[t]]))
        refined = [r["nmse_refined"] for r in per_t[t] if not math.isnan(r["nmse_refined"])]
        out.append({"t": t, "nmse": v, "nmse_db": to_db(v),
                    "nmse_refined": float(np.mean(refined)) if refined else math.nan, "trials": len(per_t[t])})
    return out


def eval_window(cfg: SystemConfig, hyper: TrainingHyper, sweep: SweepConfig, rng: Rng,
                threads: Optional[int] = None) -> List[dict]:
    """Train one model per window length S and report its prediction NMSE."""
    def cell(i):
        S = sweep.windows[i]
        c = cfg.model_copy(update={"S": S})
        ds = build_dataset(c, hyper, rng.child(i, 0))
        result = train(ds, hyper, rng.child(i, 1))
        errs = [prediction_trial(result.params, c, rng.child(i, 2, trial))[0]["H_pred"]
                for trial in range(sweep.trials)]
        v = float(np.mean(errs))
        return [{"S": S, "nmse": v, "nmse_db": to_db(v), "best_epoch": result.best_epoch, "trials": sweep.trials}]
    return flatten(run_cells(cell, range(len(sweep.windows)), threads))


def overhead_tables(cfg: SystemConfig, sweep: SweepConfig, T_L: Optional[int] = None) -> Dict[str, List[dict]]:
    """Overhead summary, complexity rows, the coefficient-vs-T_S curve and its intersections."""
    T_L = T_L if T_L is not None else cfg.T_L
    report = analytics.pilot_overhead(cfg, sweep.parafac_P)
    summary = [{"quantity": k, "value": v} for k, v in report.model_dump().items()
               if k not in ("baseline_P_a", "stage2_mode")]
    summary += [{"quantity": f"P_a[{k}]", "value": v} for k, v in sorted(report.baseline_P_a.items())]
    complexity = [{"method": "SCLSTM", "complexity": analytics.sclstm_complexity(cfg.M, cfg.N, cfg.K)}]
    complexity += [{"method": k, "complexity": v} for k, v in
                   analytics.baseline_complexity(cfg.M, cfg.N, cfg.K, cfg.L_G, sweep.i_max).items()]
    return {
        "overhead": summary,
        "complexity": complexity,
        "lambda_curve": analytics.lambda_curve(cfg, T_L, sweep.ts_values, sweep.parafac_P),
        "intersections": analytics.intersections(cfg, T_L),
    }


def _noisy(H: np.ndarray, nmse_db: float, rng: Rng) -> np.ndarray:
    energy = float(np.mean(np.abs(H) ** 2))
    noise = sample_cn(H.size, 1, energy * 10.0 ** (nmse_db / 10.0), rng).reshape(H.shape)
    return H + noise


def _method_rates(params: Optional[SclstmParams], cfg: SystemConfig, sweep: SweepConfig, rng: Rng) -> Dict[str, float]:
    """Sum rate (lambda_d = 1) of one channel draw for each CSI source."""
    ep = gen_episode(cfg, cfg.S + 1, rng.child(0))
    truth = ep.cascaded(cfg.S + 1)
    sigma2 = cfg.noise_variance
    if params is not None:
        report = run_stages(cfg, ep, tuple(range(1, cfg.S + 1)), rng.child(1))
        sclstm_csi = predict_window(params, report.H_hat).H_tilde[0]
    else:
        sclstm_csi = _noisy(truth, sweep.sclstm_nmse_db, rng.child(2))
    plan = direct_plan(cfg)
    ls_csi = estimate_cascaded_direct(synth_plan_rx(truth, plan, sigma2, rng.child(3)), plan)[0]
    two_ts = run_stages(cfg, ep, (cfg.S + 1,), rng.child(4)).H_hat[:, 0]
    csi = {"Perfect": truth, "SCLSTM": sclstm_csi, "MVU": ls_csi, "PARAFAC-VAMP": ls_csi, "Two-timescale": two_ts}
    return {m: analytics.design_and_rate(H, truth, sigma2, 1.0) for m, H in csi.items()}


def sumrate_sweep(params: Optional[SclstmParams], cfg: SystemConfig, sweep: SweepConfig, rng: Rng,
                  threads: Optional[int] = None) -> List[dict]:
    """
    Average sum rate versus T_S at fixed T_L: the per-draw rate of each CSI
    source scaled by that method's data coefficient. Infeasible points carry no
    rate.
    """
    draws = run_cells(lambda trial: _method_rates(params, cfg, sweep, rng.child(trial)), range(sweep.trials), threads)
    mean_rate = {m: float(np.mean([d[m] for d in draws.values()])) for m in next(iter(draws.values()))}
    rows = []
    for point in analytics.lambda_curve(cfg, sweep.rate_T_L, sweep.ts_values, sweep.parafac_P):
        lam = point["lambda_d"]
        rows.append({"T_S": point["T_S"], "tau": point["tau"], "method": point["method"], "lambda_d": lam,
                     "sum_rate": lam * mean_rate[point["method"]] if point["feasible"] else math.nan,
                     "feasible": point["feasible"], "trials": sweep.trials})
    for T_S in sweep.ts_values:
        rows.append({"T_S": T_S, "tau": sweep.rate_T_L / T_S, "method": "Perfect", "lambda_d": 1.0,
                     "sum_rate": mean_rate["Perfect"], "feasible": True, "trials": sweep.trials})
    return rows
