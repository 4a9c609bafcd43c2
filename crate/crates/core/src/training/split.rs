use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::labeler::ManeuverLabel;
use crate::seed;
use crate::trajdata::VehicleId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<VehicleId>,
    pub validation: Vec<VehicleId>,
    /// False when the classes could not be spread over both sides.
    pub stratified: bool,
}

type Target = (VehicleId, bool, bool);

/// Whole-trajectory split of `targets`, each tagged with the lane-change
/// classes `(has_left, has_right)` it contains.
pub fn split_targets(targets: &[(VehicleId, bool, bool)], ratio: f64, seed_value: u64) -> Split {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0, 1)");
    let mut rng = seed::derived_rng(seed_value, "split");
    // strata: left only, right only, both, neither
    let mut strata: [Vec<Target>; 4] = Default::default();
    let mut sorted = targets.to_vec();
    sorted.sort_by_key(|t| t.0);
    for t in sorted {
        let s = match (t.1, t.2) {
            (true, false) => 0,
            (false, true) => 1,
            (true, true) => 2,
            (false, false) => 3,
        };
        strata[s].push(t);
    }
    for s in strata.iter_mut() {
        s.shuffle(&mut rng);
    }
    let order: Vec<_> = strata.concat();
    let n = order.len();
    let n_train = if n < 2 { n } else { ((ratio * n as f64).round() as usize).clamp(1, n - 1) };
    // systematic allocation keeps every stratum near the global ratio
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, t) in order.into_iter().enumerate() {
        if (i + 1) * n_train / n.max(1) > i * n_train / n.max(1) {
            train.push(t);
        } else {
            val.push(t);
        }
    }
    for left in [true, false] {
        rebalance(&mut val, &mut train, left);
        rebalance(&mut train, &mut val, left);
    }
    let stratified = [true, false]
        .iter()
        .all(|&left| train.iter().any(|t| carries(t, left)) && val.iter().any(|t| carries(t, left)));
    if !stratified {
        log::warn!(
            "too few lane changes to put both classes on both sides of the split; using an unstratified split"
        );
    }
    let mut train: Vec<_> = train.into_iter().map(|t| t.0).collect();
    let mut validation: Vec<_> = val.into_iter().map(|t| t.0).collect();
    train.sort_unstable();
    validation.sort_unstable();
    Split {
        train,
        validation,
        stratified,
    }
}

pub fn split_dataset(ds: &Dataset, ratio: f64, seed_value: u64) -> Split {
    let targets: Vec<_> = ds
        .sequences
        .iter()
        .map(|s| {
            (
                s.vehicle_id,
                s.has_lane_change(ManeuverLabel::L),
                s.has_lane_change(ManeuverLabel::R),
            )
        })
        .collect();
    split_targets(&targets, ratio, seed_value)
}

fn carries(t: &Target, left: bool) -> bool {
    if left {
        t.1
    } else {
        t.2
    }
}

/// If `short` lacks the class and `long` can spare a carrier, trade it for a
/// target of `short` that carries neither class when possible.
fn rebalance(short: &mut Vec<Target>, long: &mut Vec<Target>, left: bool) {
    if short.is_empty() || short.iter().any(|t| carries(t, left)) || long.iter().filter(|t| carries(t, left)).count() < 2 {
        return;
    }
    let give = long
        .iter()
        .position(|t| carries(t, left) && !carries(t, !left))
        .or_else(|| long.iter().position(|t| carries(t, left)))
        .unwrap();
    let take = short.iter().position(|t| !t.1 && !t.2).unwrap_or(0);
    let a = long.remove(give);
    let b = short.remove(take);
    short.push(a);
    long.push(b);
}
