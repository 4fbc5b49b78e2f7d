use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::conformal::{ClassId, LabelSpace, LogitExample};
use crate::error::{Error, Result};
use crate::rng;

/// Anything with an example id and a class label.
pub trait Labeled {
    fn id(&self) -> &str;
    fn label(&self) -> ClassId;
}

impl Labeled for LogitExample {
    fn id(&self) -> &str {
        &self.example_id
    }
    fn label(&self) -> ClassId {
        self.true_label
    }
}

impl Labeled for (String, ClassId) {
    fn id(&self) -> &str {
        &self.0
    }
    fn label(&self) -> ClassId {
        self.1
    }
}

impl<T: Labeled + ?Sized> Labeled for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn label(&self) -> ClassId {
        (**self).label()
    }
}

/// Classes retained after frequency-based selection, with their original keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubset<K> {
    pub label_space: LabelSpace,
    /// `original[new_id]` is the key the class had before selection.
    pub original: Vec<K>,
}

impl<K: PartialEq> ClassSubset<K> {
    pub fn remap(&self, key: &K) -> Option<ClassId> {
        self.original.iter().position(|k| k == key)
    }
}

/// The `m_prime` most frequent classes, most frequent first; ties by ascending key.
pub fn select_top_classes<K>(counts: &BTreeMap<K, usize>, m_prime: usize) -> Result<ClassSubset<K>>
where
    K: Ord + Clone + ToString,
{
    if counts.len() < m_prime {
        return Err(Error::invalid(format!(
            "need {m_prime} classes, only {} present",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&K, usize)> = counts.iter().map(|(k, &c)| (k, c)).collect();
    // BTreeMap iteration is already ascending by key; a stable sort keeps that for ties.
    ranked.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
    let original: Vec<K> = ranked
        .into_iter()
        .take(m_prime)
        .map(|(k, _)| k.clone())
        .collect();
    let label_space = LabelSpace::new(original.iter().map(ToString::to_string))?;
    Ok(ClassSubset {
        label_space,
        original,
    })
}

fn by_class<T: Labeled>(examples: &[T], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); num_classes];
    for (i, ex) in examples.iter().enumerate() {
        let y = ex.label();
        if y >= num_classes {
            return Err(Error::invalid(format!(
                "label {y} outside {num_classes} classes"
            )));
        }
        groups[y].push(i);
    }
    Ok(groups)
}

/// A class-balanced subset, drawn uniformly without replacement within each class.
///
/// Every class keeps `min_count` examples, or `target_total / num_classes` when
/// that is smaller. Output preserves input order, so balancing a balanced
/// input returns it unchanged.
pub fn stratified_balance<T: Labeled + Clone>(
    examples: &[T],
    num_classes: usize,
    target_total: Option<usize>,
    seed: u64,
) -> Result<Vec<T>> {
    let groups = by_class(examples, num_classes)?;
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {empty} has no examples")));
    }
    let mut per_class = groups.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(total) = target_total {
        per_class = per_class.min(total / num_classes);
    }
    if per_class == 0 {
        return Err(Error::invalid("balanced subset would be empty"));
    }
    let mut keep = vec![false; examples.len()];
    for (class, members) in groups.iter().enumerate() {
        let mut rng = rng::stream("stratified-balance", seed, &class.to_string());
        for &i in members.choose_multiple(&mut rng, per_class) {
            keep[i] = true;
        }
    }
    Ok(examples
        .iter()
        .zip(keep)
        .filter(|&(_ex, k)| k)
        .map(|(ex, _k)| ex.clone())
        .collect())
}

/// Calibration split size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_cal: usize,
    pub seed: u64,
    pub class_subset_size: usize,
}

/// Splits a balanced set into balanced, disjoint calibration and test parts.
pub fn split_cal_test<T: Labeled + Clone>(
    examples: &[T],
    spec: &SplitSpec,
) -> Result<(Vec<T>, Vec<T>)> {
    let classes = spec.class_subset_size;
    if classes == 0 {
        return Err(Error::invalid("class_subset_size must be positive"));
    }
    if spec.n_cal == 0 {
        return Err(Error::invalid("calibration split must be non-empty"));
    }
    if spec.n_cal > examples.len() {
        return Err(Error::invalid(format!(
            "n_cal {} exceeds {} examples",
            spec.n_cal,
            examples.len()
        )));
    }
    if !spec.n_cal.is_multiple_of(classes) {
        return Err(Error::invalid(format!(
            "n_cal {} is not divisible by {classes} classes",
            spec.n_cal
        )));
    }
    let groups = by_class(examples, classes)?;
    let per_class = groups[0].len();
    if groups.iter().any(|g| g.len() != per_class) {
        return Err(Error::invalid("split input must be class balanced"));
    }
    let cal_per_class = spec.n_cal / classes;
    let mut in_cal = vec![false; examples.len()];
    for (class, members) in groups.iter().enumerate() {
        let mut rng = rng::stream("split-cal-test", spec.seed, &class.to_string());
        for &i in members.choose_multiple(&mut rng, cal_per_class) {
            in_cal[i] = true;
        }
    }
    let (cal, test): (Vec<_>, Vec<_>) = examples.iter().zip(in_cal).partition(|(_, c)| *c);
    Ok((
        cal.into_iter().map(|(ex, _)| ex.clone()).collect(),
        test.into_iter().map(|(ex, _)| ex.clone()).collect(),
    ))
}

/// A fixed practice selection spread across classes round-robin.
///
/// Classes are visited in a seeded order and each class contributes its
/// examples in a seeded order, so the result depends only on `(pool, seed)`.
pub fn select_practice<T: Labeled>(
    pool: &[T],
    count: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if count > pool.len() {
        return Err(Error::invalid(format!(
            "{count} practice examples requested from a pool of {}",
            pool.len()
        )));
    }
    let mut groups = by_class(pool, num_classes)?;
    for (class, g) in groups.iter_mut().enumerate() {
        g.shuffle(&mut rng::stream(
            "practice-examples",
            seed,
            &class.to_string(),
        ));
    }
    let mut class_order: Vec<usize> = (0..num_classes).collect();
    class_order.shuffle(&mut rng::stream("practice-classes", seed, ""));

    let mut picked = Vec::with_capacity(count);
    let mut round = 0;
    while picked.len() < count {
        for &class in &class_order {
            if picked.len() == count {
                break;
            }
            if let Some(&i) = groups[class].get(round) {
                picked.push(pool[i].id().to_owned());
            }
        }
        round += 1;
    }
    Ok(picked)
}

/// Draws `m` stimuli without replacement, shuffled by `seed`.
///
/// With `stratify`, each class contributes `m / M` examples and `m % M`
/// classes, chosen at random, contribute one more.
pub fn sample_participant_stimuli<T: Labeled>(
    pool: &[T],
    num_classes: usize,
    m: usize,
    stratify: bool,
    exclude: &HashSet<String>,
    seed: u64,
) -> Result<Vec<String>> {
    let eligible: Vec<&T> = pool
        .iter()
        .filter(|ex| !exclude.contains(ex.id()))
        .collect();
    if m > eligible.len() {
        return Err(Error::invalid(format!(
            "{m} stimuli requested, {} eligible",
            eligible.len()
        )));
    }
    let mut rng = rng::stream("participant-stimuli", seed, "");
    let mut chosen: Vec<String> = if stratify {
        let groups = by_class(&eligible, num_classes)?;
        let base = m / num_classes;
        let extra = m % num_classes;
        if let Some(short) = groups.iter().position(|g| g.len() < base) {
            return Err(Error::invalid(format!(
                "class {short} has {} eligible examples, {base} needed",
                groups[short].len()
            )));
        }
        let candidates: Vec<usize> = (0..num_classes)
            .filter(|&c| groups[c].len() > base)
            .collect();
        if candidates.len() < extra {
            return Err(Error::invalid("not enough classes to place the remainder"));
        }
        let bumped: HashMap<usize, ()> = candidates
            .choose_multiple(&mut rng, extra)
            .map(|&c| (c, ()))
            .collect();
        let mut out = Vec::with_capacity(m);
        for (class, members) in groups.iter().enumerate() {
            let take = base + usize::from(bumped.contains_key(&class));
            out.extend(
                members
                    .choose_multiple(&mut rng, take)
                    .map(|&i| eligible[i].id().to_owned()),
            );
        }
        out
    } else {
        eligible
            .choose_multiple(&mut rng, m)
            .map(|ex| ex.id().to_owned())
            .collect()
    };
    chosen.shuffle(&mut rng);
    Ok(chosen)
}
