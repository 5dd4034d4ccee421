//! JSON shapes of command results.

use serde_json::{json, Map, Value};
use shiftkit_core::fjs::{EmEstimate, PhiCurve};
use shiftkit_core::normal_form::NormalForm;
use shiftkit_core::selection::{AnalysisMode, Simulation};
use shiftkit_core::taxonomy::{ShiftReport, Witness};
use shiftkit_core::{
    Error, FeatureDensity, FiniteJointDistribution, FjsCharacterization, JointDensity, PosteriorTable,
    SelectionAnalysis, Table,
};

use crate::json::num;

fn numbers(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|&v| num(v)).collect())
}

fn rows(t: &Table) -> Value {
    Value::Array(t.iter_rows().map(numbers).collect())
}

/// `{"features", "classes", "values"}` for a cell-by-class table.
pub fn table(dist: &FiniteJointDistribution, t: &Table) -> Value {
    json!({
        "features": dist.features(),
        "classes": dist.classes(),
        "values": rows(t),
    })
}

/// Undefined rows are `null`.
pub fn posteriors(dist: &FiniteJointDistribution, post: &PosteriorTable) -> Value {
    let values: Vec<Value> = (0..post.num_cells())
        .map(|x| if post.is_defined(x) { numbers(post.row(x)) } else { Value::Null })
        .collect();
    json!({
        "features": dist.features(),
        "classes": dist.classes(),
        "values": values,
    })
}

pub fn feature_vector(dist: &FiniteJointDistribution, values: &[f64]) -> Value {
    json!({ "features": dist.features(), "values": numbers(values) })
}

pub fn class_vector(dist: &FiniteJointDistribution, values: &[f64]) -> Value {
    json!({ "classes": dist.classes(), "values": numbers(values) })
}

pub fn decomposition(
    source: &FiniteJointDistribution,
    nf: &NormalForm,
    h: &FeatureDensity,
    joint: &JointDensity,
) -> Value {
    json!({
        "class_densities": table(source, nf.class_densities.table()),
        "prior_ratios": class_vector(source, &nf.prior_ratios),
        "feature_density": feature_vector(source, h.values()),
        "joint_density": table(source, joint.table()),
    })
}

pub fn characterization(source: &FiniteJointDistribution, c: &FjsCharacterization) -> Value {
    json!({
        "q": class_vector(source, c.q.values()),
        "rho": numbers(&c.rho),
        "g": feature_vector(source, &c.g),
        "b": class_vector(source, &c.b),
        "residual": num(c.residual),
        "iterations": c.iterations,
        "converged": c.converged,
        "degenerate": c.degenerate,
    })
}

pub fn em(source: &FiniteJointDistribution, e: &EmEstimate) -> Value {
    json!({
        "q": class_vector(source, &e.q),
        "iterations": e.iterations,
        "converged": e.converged,
        "boundary_collapse": e.boundary_collapse,
        "step": num(e.step),
    })
}

pub fn phi_curve(c: &PhiCurve) -> Value {
    let points: Vec<Value> = c
        .points
        .iter()
        .map(|p| json!({ "q": num(p.q), "rho": num(p.rho), "residual": num(p.residual) }))
        .collect();
    json!({
        "points": points,
        "limit_q_to_0": num(c.limit_q_to_0),
        "limit_q_to_1": num(c.limit_q_to_1),
        "non_unique": c.non_unique,
    })
}

fn witness(dist: &FiniteJointDistribution, w: &Witness) -> Value {
    let cell = |x: usize| Value::String(dist.features()[x].clone());
    let class = |i: usize| Value::String(dist.classes()[i].clone());
    match w {
        Witness::Entry { check, cell: x, class: i } => {
            json!({ "check": check.name(), "cell": cell(*x), "class": class(*i) })
        }
        Witness::Cells { check, class: i, cells } => json!({
            "check": check.name(),
            "class": i.map_or(Value::Null, class),
            "cells": [cell(cells.0), cell(cells.1)],
        }),
        Witness::Group { check, group, class: i, reason } => json!({
            "check": check.name(),
            "group": group,
            "class": class(*i),
            "reason": reason,
        }),
        Witness::Undetermined { class: i } => json!({ "check": "fjs", "undetermined_class": class(*i) }),
        Witness::Implied { check, by } => json!({ "check": check.name(), "implied_by": by.name() }),
    }
}

pub fn shift_report(dist: &FiniteJointDistribution, r: &ShiftReport) -> Value {
    let opt = |b: Option<bool>| b.map_or(Value::Null, Value::Bool);
    json!({
        "tolerance": num(r.tolerance),
        "no_shift": r.no_shift,
        "prior_shift": r.prior_shift,
        "covariate_shift": r.covariate_shift,
        "fjs": r.fjs,
        "rho": r.rho.as_deref().map_or(Value::Null, numbers),
        "cspd": opt(r.cspd),
        "gls": opt(r.gls),
        "domain_invariance": opt(r.domain_invariance),
        "witnesses": r.witnesses.iter().map(|w| witness(dist, w)).collect::<Vec<_>>(),
    })
}

pub fn simulation(dist: &FiniteJointDistribution, seed: u64, sim: &Simulation, exact: &FiniteJointDistribution) -> Value {
    json!({
        "seed": seed,
        "draws": sim.draws,
        "accepted": sim.accepted,
        "counts": {
            "features": dist.features(),
            "classes": dist.classes(),
            "values": sim.counts,
        },
        "frequencies": table(dist, &sim.frequencies()),
        "expected": table(dist, exact.weights()),
    })
}

pub fn selection_analysis(dist: &FiniteJointDistribution, a: &SelectionAnalysis) -> Value {
    let mode = match a.mode {
        AnalysisMode::KnownPopulationPriors => "known-priors",
        AnalysisMode::AlphaOne => "alpha-one",
    };
    json!({
        "mode": mode,
        "alpha": numbers(&a.alpha),
        "population_priors": class_vector(dist, &a.population_priors),
        "sample_priors": class_vector(dist, &a.sample_priors),
        "recovered_posteriors": posteriors(dist, &a.recovered_posteriors),
        "classwise_selection": table(dist, &a.classwise_selection),
        "g_star": feature_vector(dist, &a.g_star),
        "b_star": class_vector(dist, &a.b_star),
        "admissible": a.admissible,
        "necessary_bound_ok": a.necessary_bound_ok,
        "residual": num(a.residual),
        "iterations": a.iterations,
    })
}

/// `{"error": name, "message": text}` plus any extra fields.
pub fn error(name: &str, message: &str, extra: Option<Map<String, Value>>) -> Value {
    let mut map = extra.unwrap_or_default();
    map.insert("error".into(), Value::String(name.into()));
    map.insert("message".into(), Value::String(message.into()));
    Value::Object(map)
}

/// Structured fields of a domain error worth reporting beyond its message.
pub fn error_details(dist: Option<&FiniteJointDistribution>, e: &Error) -> Map<String, Value> {
    let mut map = Map::new();
    match e {
        Error::InvalidDistribution(report) => {
            map.insert(
                "issues".into(),
                report.issues().iter().map(|i| Value::String(i.to_string())).collect(),
            );
        }
        Error::NoConvergence { iterations, residual } => {
            map.insert("iterations".into(), json!(iterations));
            map.insert("residual".into(), num(*residual));
        }
        Error::AbsoluteContinuityViolation { entries } | Error::NotEquivalent { entries } => {
            let entries: Vec<Value> = entries
                .iter()
                .map(|&(x, i)| match dist {
                    Some(d) => json!([d.features()[x], d.classes()[i]]),
                    None => json!([x, i]),
                })
                .collect();
            map.insert("entries".into(), Value::Array(entries));
        }
        _ => {}
    }
    map
}
