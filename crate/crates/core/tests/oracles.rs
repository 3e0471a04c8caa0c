mod common;

use common::*;
use ptree::latent_markov::{LatentFit, StateKind, StateModel};
use ptree::mv_opt::{expand_and_pass, ExpansionConfig, JointPosterior};
use ptree::partition_tree::{build_fixed_tree, build_partial_tree, Dataset, PartitionTree, Region};
use ptree::pt_kernel::{
    bayes_factor, log_partial_likelihood, node_marginal, posterior_branch_mean, BaseMeasure,
    BetaNodePrior, Concentration, LikelihoodMode, Marginal, Side,
};
use ptree::PriorSpec;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn relative(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

fn random_state_model(r: &mut rand_chacha::ChaCha8Rng, with_stop: bool) -> StateModel {
    let c0 = r.random_range(0.5..5.0);
    if with_stop {
        StateModel::optional(Concentration::Constant(c0), r.random_range(0.05..0.95)).unwrap()
    } else {
        let c1 = r.random_range(0.5..20.0);
        let p = r.random_range(0.05..0.95);
        let q = r.random_range(0.05..0.95);
        StateModel {
            states: vec![
                StateKind::Active { concentration: Concentration::Constant(c0) },
                StateKind::Active { concentration: Concentration::ByLevel(vec![c1, 2.0 * c1]) },
            ],
            transition: vec![vec![1.0 - p, p], vec![q, 1.0 - q]],
            root_state: 0,
        }
    }
}

fn tree_1d(data: &Dataset, depth: i64, partial: bool) -> PartitionTree {
    if partial {
        build_partial_tree(data, depth, 0.5).unwrap()
    } else {
        build_fixed_tree(data, depth).unwrap()
    }
}

#[test]
fn single_split_evidence_matches_rising_factorials() {
    let mut r = rng(11);
    for _ in 0..100 {
        let c = r.random_range(0.1..50.0);
        let nl = r.random_range(0..40);
        let nr = r.random_range(0..40);
        let (a, b) = (r.random_range(0.5..4.0), r.random_range(0.5..4.0));
        let mut xs: Vec<f64> = (0..nl).map(|_| r.random_range(0.01..0.49)).collect();
        xs.extend((0..nr).map(|_| r.random_range(0.51..0.99)));
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let tree = build_fixed_tree(&data, 1).unwrap();
        let base = BaseMeasure::product(Region::unit(1), vec![Marginal::Beta { a, b }]).unwrap();
        let hl = base.marginal_cdf(0, 0.5);
        let got = bayes_factor(&tree, &base, &Concentration::Constant(c)).unwrap();
        let want = if nl + nr > 1 { ln_eta(c, hl, 1.0 - hl, nl, nr) } else { 0.0 };
        assert!(close(got, want, 1e-12), "{got} vs {want} (c={c}, n=({nl},{nr}))");
    }
}

#[test]
fn node_marginal_hand_values() {
    let data = Dataset::from_values(&[0.2, 0.5, 0.9], 0.0, 1.0).unwrap();
    let tree = build_partial_tree(&data, 3, 0.5).unwrap();
    let prior = BetaNodePrior::new(1.0, 1.0).unwrap();
    let ev = node_marginal(tree.root(), &prior, (0.5, 0.5)).unwrap();
    assert!((ev.log_m.exp() - 1.0 / 6.0).abs() < 1e-14);
    assert!((ev.log_eta.exp() - 2.0 / 3.0).abs() < 1e-14);
    let left = posterior_branch_mean(tree.root(), Side::Left, &prior).unwrap();
    assert!((left - 0.5).abs() < 1e-15);
}

#[test]
fn partial_denominator_uses_post_removal_total() {
    let xs = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.7];
    let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
    let mut tree = build_partial_tree(&data, 1, 0.5).unwrap();
    // force the post-removal counts (5, 1) on the root
    let j = tree.nodes[0].split.as_ref().unwrap().dimension;
    tree.nodes[0].counts_left[j] = 5;
    tree.nodes[0].counts_right[j] = 1;
    let prior = BetaNodePrior::new(1.0, 1.0).unwrap();
    let left = posterior_branch_mean(&tree.nodes[0], Side::Left, &prior).unwrap();
    assert!((left - 0.75).abs() < 1e-15);
    assert_ne!(tree.nodes[0].n_total, 6);
}

#[test]
fn partial_likelihood_factorizes_over_points() {
    let mut r = rng(5);
    for trial in 0..40 {
        let n = r.random_range(2..=20);
        let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let partial = trial % 2 == 0;
        let tree = tree_1d(&data, 4, partial);
        let probs: Vec<f64> = (0..tree.len()).map(|_| r.random_range(0.05..0.95)).collect();
        let members = recount(&tree, &data);
        // per observation: product of branch probabilities along its path,
        // stopping where it is removed as an anchor or tie
        let mut direct = 1.0;
        for i in 0..n {
            let mut id = 0;
            while let Some((l, rr)) = tree.nodes[id].children {
                if members[l].contains(&i) {
                    direct *= probs[id];
                    id = l;
                } else if members[rr].contains(&i) {
                    direct *= 1.0 - probs[id];
                    id = rr;
                } else {
                    break;
                }
            }
        }
        let got = log_partial_likelihood(&tree, &probs).unwrap().exp();
        assert!(relative(got, direct, 1e-10), "{got} vs {direct}");
    }
}

#[test]
fn recount_agrees_with_stored_counts() {
    let mut r = rng(3);
    for trial in 0..30 {
        let n = r.random_range(0..200);
        let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let tree = tree_1d(&data, 6, trial % 2 == 0);
        let members = recount(&tree, &data);
        for (id, node) in tree.nodes.iter().enumerate() {
            assert_eq!(node.n_total, members[id].len());
            if let (Some((l, rr)), Some((nl, nr))) = (node.children, node.split_counts()) {
                assert_eq!((nl, nr), (members[l].len(), members[rr].len()));
            }
        }
    }
}

fn check_latent_against_enumeration(tree: &PartitionTree, data: &Dataset, model: StateModel, tol: f64) {
    let prior = PriorSpec {
        base: BaseMeasure::uniform(tree.bounds.clone()),
        states: model.clone(),
        split_weights: None,
    };
    let fit = LatentFit::new(tree, &prior).unwrap();
    let en = LatentEnumeration::new(tree, data, &model);
    assert!(close(fit.log_bayes_factor(), en.log_phi(), tol), "{} vs {}", fit.log_bayes_factor(), en.log_phi());

    let s = model.len();
    let parent: Vec<Option<usize>> = {
        let mut p = vec![None; tree.len()];
        for (id, node) in tree.nodes.iter().enumerate() {
            if let Some((l, rr)) = node.children {
                p[l] = Some(id);
                p[rr] = Some(id);
            }
        }
        p
    };
    let marginals = fit.state_marginals();
    for &id in &en.internal {
        let mat = fit.posterior.matrices[id].as_ref().expect("internal node has a transition");
        let rows: Vec<usize> = if parent[id].is_none() { vec![model.root_state] } else { (0..s).collect() };
        for a in rows {
            for b in 0..s {
                if let Some(want) = en.transition(tree, id, a, b, model.root_state) {
                    assert!((mat[a][b] - want).abs() <= tol * want.max(1.0), "node {id} {a}->{b}: {} vs {want}", mat[a][b]);
                }
            }
        }
        let marg = marginals[id].as_ref().unwrap();
        for b in 0..s {
            let want: f64 = en.configs.iter().filter(|(_, a)| a[id] == b).map(|(w, _)| w).sum::<f64>() / en.z;
            assert!((marg[b] - want).abs() <= tol, "marginal node {id} state {b}");
        }
    }
    for k in 0..25 {
        let x = (k as f64 + 0.37) / 25.0;
        let got = fit.predictive(&[x]).unwrap();
        let want = en.predictive(tree, &model, x);
        assert!(relative(got, want, tol), "predictive at {x}: {got} vs {want}");
    }
}

#[test]
fn latent_messages_match_state_enumeration() {
    let mut r = rng(17);
    for trial in 0..60 {
        let n = r.random_range(0..=12);
        let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let depth = r.random_range(0..=3);
        let tree = tree_1d(&data, depth, trial % 2 == 0);
        assert!(tree.len() <= 15);
        let model = random_state_model(&mut r, trial % 3 != 2);
        check_latent_against_enumeration(&tree, &data, model, 1e-10);
    }
}

#[test]
fn raw_and_ratio_forms_give_the_same_transitions() {
    let mut r = rng(29);
    for trial in 0..30 {
        let n = r.random_range(2..=12);
        let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let tree = tree_1d(&data, 3, trial % 2 == 0);
        let model = random_state_model(&mut r, true);
        let prior = PriorSpec {
            base: BaseMeasure::uniform(Region::unit(1)),
            states: model.clone(),
            split_weights: None,
        };
        let fit = LatentFit::new(&tree, &prior).unwrap();
        let s = model.len();
        // raw marginal likelihoods: beta-binomial moments for active states,
        // base-measure binomial terms for the stopping state
        let raw_m = |id: usize, st: usize| -> f64 {
            let node = &tree.nodes[id];
            let (nl, nr) = node.split_counts().unwrap();
            let reg = &node.region;
            let hl = (node.split.as_ref().unwrap().location - reg.lower[0]) / reg.width(0);
            match &model.states[st] {
                StateKind::Stop => hl.powi(nl as i32) * (1.0 - hl).powi(nr as i32),
                StateKind::Active { concentration } => {
                    let c = concentration.at(node.depth);
                    (ln_rising(c * hl, nl) + ln_rising(c * (1.0 - hl), nr) - ln_rising(c, nl + nr)).exp()
                }
            }
        };
        let mut phi = vec![vec![1.0; s]; tree.len()];
        for id in (0..tree.len()).rev() {
            let Some((l, rr)) = tree.nodes[id].children else { continue };
            for a in 0..s {
                phi[id][a] = (0..s).map(|b| model.transition[a][b] * raw_m(id, b) * phi[l][b] * phi[rr][b]).sum();
            }
        }
        for id in 0..tree.len() {
            let Some((l, rr)) = tree.nodes[id].children else { continue };
            let mat = fit.posterior.matrices[id].as_ref().unwrap();
            for a in 0..s {
                for b in 0..s {
                    let want = model.transition[a][b] * raw_m(id, b) * phi[l][b] * phi[rr][b] / phi[id][a];
                    assert!((mat[a][b] - want).abs() <= 1e-10, "node {id} {a}->{b}");
                }
            }
        }
    }
}

fn mv_prior(model: &StateModel, lambda: Vec<f64>) -> PriorSpec {
    PriorSpec {
        base: BaseMeasure::uniform(Region::unit(2)),
        states: model.clone(),
        split_weights: Some(lambda),
    }
}

/// Enumerated `P(top of child config = (j', s') | root = (j, s), x)` for the
/// left child of the root split on `j` in state `s`.
fn child_conditional(summary: &MvSummary, j: usize, s: usize, d: usize, n_states: usize) -> Option<Vec<f64>> {
    let mut out = vec![0.0; d * n_states];
    let mut total = 0.0;
    for (w, c) in &summary.configs {
        if let Config::Split { dim, state, left, .. } = c {
            if *dim != j || *state != s {
                continue;
            }
            total += w;
            match left.as_ref() {
                Config::Split { dim: jj, state: ss, .. } => out[jj * n_states + ss] += w,
                Config::Stop { state: ss } => out[*ss] += w,
                Config::Leaf => return None,
            }
        }
    }
    if total == 0.0 {
        return None;
    }
    Some(out.iter().map(|v| v / total).collect())
}

fn check_mv_against_enumeration(data: &[Vec<f64>], model: &StateModel, lambda: Vec<f64>, depth: usize, partial: bool) {
    let d = 2;
    let s = model.len();
    let ds = Dataset::new(data.to_vec(), Region::unit(d)).unwrap();
    let prior = mv_prior(model, lambda.clone());
    let mode = if partial { LikelihoodMode::Partial } else { LikelihoodMode::Full };
    let post: JointPosterior = expand_and_pass(&ds, &prior, mode, &ExpansionConfig::new(depth as i64).unwrap()).unwrap();
    let en = MvEnumerator { data, model, lambda, partial, max_depth: depth };
    let summary = en.summarize(vec![0.0; d], vec![1.0; d]);
    assert!(close(post.log_bayes_factor(), summary.log_phi, 1e-10), "{} vs {}", post.log_bayes_factor(), summary.log_phi);

    if let Some(row) = post.joint_row(post.root, model.root_state) {
        for j in 0..d {
            for st in 0..s {
                if model.states[st].is_stop() {
                    continue;
                }
                let got = row[j * s + st];
                assert!((got - summary.root_joint[j][st]).abs() <= 1e-10, "root ({j},{st})");
            }
        }
        for st in 0..s {
            let got: f64 = (0..d).map(|j| row[j * s + st]).sum::<f64>();
            let want = if model.states[st].is_stop() {
                summary.stop_mass[st]
            } else {
                (0..d).map(|j| summary.root_joint[j][st]).sum()
            };
            assert!((got - want).abs() <= 1e-10, "root state {st}");
        }
        let root = post.root_node();
        for j in 0..d {
            let Some(split) = &root.splits[j] else { continue };
            let Some(child_row_all) = post.nodes[split.left].joint.as_ref() else { continue };
            for st in 0..s {
                if model.states[st].is_stop() {
                    continue;
                }
                let Some(want) = child_conditional(&summary, j, st, d, s) else { continue };
                let got = &child_row_all[st];
                for ss in 0..s {
                    let g: f64 = if model.states[ss].is_stop() {
                        (0..d).map(|jj| got[jj * s + ss]).sum()
                    } else {
                        got[ss]
                    };
                    let w = want[ss];
                    assert!((g - w).abs() <= 1e-10, "child of root on dim {j}: state {ss}: {g} vs {w}");
                    if !model.states[ss].is_stop() {
                        let g1 = got[s + ss];
                        let w1 = want[s + ss];
                        assert!((g1 - w1).abs() <= 1e-10, "child dim 1 state {ss}: {g1} vs {w1}");
                    }
                }
            }
        }
    } else {
        assert_eq!(summary.configs.len(), 1);
    }
    let mut r = rng(99);
    for _ in 0..20 {
        let x = [r.random::<f64>(), r.random::<f64>()];
        let got = post.predictive(&x).unwrap();
        let want = en.predictive(&summary, &x, 1.0);
        assert!(relative(got, want, 1e-10), "predictive at {x:?}: {got} vs {want}");
    }
}

#[test]
fn multivariate_posterior_matches_configuration_enumeration() {
    let mut r = rng(41);
    for trial in 0..24 {
        let n = r.random_range(0..=12);
        let data = random_points(&mut r, n, 2);
        let w = r.random_range(0.1..0.9);
        let model = random_state_model(&mut r, true);
        check_mv_against_enumeration(&data, &model, vec![w, 1.0 - w], 3, trial % 2 == 0);
    }
}

#[test]
fn multivariate_enumeration_with_two_active_states() {
    let mut r = rng(43);
    for trial in 0..8 {
        let n = r.random_range(3..=10);
        let data = random_points(&mut r, n, 2);
        let model = random_state_model(&mut r, false);
        check_mv_against_enumeration(&data, &model, vec![0.5, 0.5], 2, trial % 2 == 0);
    }
}

#[test]
fn multivariate_enumeration_with_zero_weight_dimension() {
    let mut r = rng(47);
    let data = random_points(&mut r, 9, 2);
    let model = StateModel::optional(Concentration::Constant(2.0), 0.5).unwrap();
    check_mv_against_enumeration(&data, &model, vec![1.0, 0.0], 3, true);
    check_mv_against_enumeration(&data, &model, vec![0.0, 1.0], 3, false);
}
