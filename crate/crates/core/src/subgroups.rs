//! Subpopulation definitions: hand-written predicates, automatic
//! cross-product selection over categorical features, and the constraint set
//! built from them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{ConstraintSpec, DistanceKind};
use crate::data::DiscreteDataset;
use crate::error::{Result, SurvError};

pub const POPULATION_NAME: &str = "population";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Code(f64),
    /// A categorical label, resolved through the dataset's label table.
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Test {
    Equals(Value),
    InSet(Vec<Value>),
    /// Closed interval `[lo, hi]`.
    Interval(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub test: Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupKind {
    Manual,
    Auto,
    FullPopulation,
}

/// A named conjunction of feature conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub name: String,
    pub conditions: Vec<Condition>,
    pub kind: SubgroupKind,
}

impl SubgroupSpec {
    pub fn full_population() -> Self {
        SubgroupSpec {
            name: POPULATION_NAME.into(),
            conditions: Vec::new(),
            kind: SubgroupKind::FullPopulation,
        }
    }

    pub fn manual(name: &str, conditions: Vec<Condition>) -> Self {
        SubgroupSpec {
            name: name.into(),
            conditions,
            kind: SubgroupKind::Manual,
        }
    }
}

fn resolve(dataset: &DiscreteDataset, feature: &str, value: &Value) -> Result<f64> {
    match value {
        Value::Code(c) => Ok(*c),
        Value::Label(label) => dataset
            .categorical_map
            .get(feature)
            .and_then(|labels| labels.iter().position(|l| l == label))
            .map(|c| c as f64)
            .ok_or_else(|| SurvError::UnknownFeature(format!("{feature}={label}"))),
    }
}

/// Which records satisfy the subgroup's predicate.
pub fn membership(spec: &SubgroupSpec, dataset: &DiscreteDataset) -> Result<Vec<bool>> {
    let mut mask = vec![true; dataset.len()];
    for cond in &spec.conditions {
        let j = dataset
            .feature_index(&cond.feature)
            .ok_or_else(|| SurvError::UnknownFeature(cond.feature.clone()))?;
        let accept: Box<dyn Fn(f64) -> bool> = match &cond.test {
            Test::Equals(v) => {
                let code = resolve(dataset, &cond.feature, v)?;
                Box::new(move |x| x == code)
            }
            Test::InSet(vs) => {
                let codes = vs
                    .iter()
                    .map(|v| resolve(dataset, &cond.feature, v))
                    .collect::<Result<Vec<_>>>()?;
                Box::new(move |x| codes.contains(&x))
            }
            Test::Interval(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                Box::new(move |x| x >= lo && x <= hi)
            }
        };
        for (m, r) in mask.iter_mut().zip(&dataset.records) {
            *m = *m && accept(r.features[j]);
        }
    }
    Ok(mask)
}

pub fn member_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

struct Candidate {
    features: Vec<usize>,
    codes: Vec<usize>,
    members: Vec<usize>,
}

/// Greedy selection over cross-products of up to `max_arity` categorical
/// features. Candidates are visited by decreasing size (ties: arity, feature
/// positions, codes); one is kept if it has at least `min_size` members and
/// shares at most `max_overlap` of its own members with every subgroup kept
/// before it.
pub fn auto_select(
    dataset: &DiscreteDataset,
    min_size: usize,
    max_overlap: f64,
    max_arity: usize,
) -> Result<Vec<SubgroupSpec>> {
    let categorical: Vec<usize> = dataset
        .feature_names
        .iter()
        .enumerate()
        .filter(|(_, n)| dataset.is_categorical(n))
        .map(|(j, _)| j)
        .collect();
    if categorical.is_empty() {
        return Err(SurvError::NoCategoricalFeatures);
    }
    if min_size == 0 || !(max_overlap > 0.0 && max_overlap <= 1.0) {
        return Err(SurvError::InvalidConfig(format!(
            "min_size must be >= 1 and max_overlap in (0, 1], got {min_size} and {max_overlap}"
        )));
    }

    let mut pool = Vec::new();
    for arity in 1..=max_arity.min(categorical.len()) {
        for combo in combinations(&categorical, arity) {
            // group records by their code tuple on this feature combination
            let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
            for (i, r) in dataset.records.iter().enumerate() {
                let key: Vec<usize> = combo.iter().map(|&j| r.features[j] as usize).collect();
                groups.entry(key).or_default().push(i);
            }
            for (codes, members) in groups {
                pool.push(Candidate {
                    features: combo.clone(),
                    codes,
                    members,
                });
            }
        }
    }
    pool.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then(a.features.len().cmp(&b.features.len()))
            .then(a.features.cmp(&b.features))
            .then(a.codes.cmp(&b.codes))
    });

    let mut accepted: Vec<(SubgroupSpec, HashSet<usize>)> = Vec::new();
    for cand in pool {
        let size = cand.members.len();
        if size < min_size {
            continue;
        }
        let ok = accepted.iter().all(|(_, prev)| {
            let shared = cand.members.iter().filter(|i| prev.contains(i)).count();
            shared as f64 / size as f64 <= max_overlap
        });
        if ok {
            let spec = candidate_spec(dataset, &cand);
            accepted.push((spec, cand.members.into_iter().collect()));
        }
    }
    Ok(accepted.into_iter().map(|(s, _)| s).collect())
}

fn candidate_spec(dataset: &DiscreteDataset, cand: &Candidate) -> SubgroupSpec {
    let mut parts = Vec::new();
    let mut conditions = Vec::new();
    for (&j, &code) in cand.features.iter().zip(&cand.codes) {
        let feature = &dataset.feature_names[j];
        let label = dataset
            .categorical_map
            .get(feature)
            .and_then(|l| l.get(code))
            .cloned()
            .unwrap_or_else(|| code.to_string());
        parts.push(format!("{feature}={label}"));
        conditions.push(Condition {
            feature: feature.clone(),
            test: Test::Equals(Value::Label(label)),
        });
    }
    SubgroupSpec {
        name: parts.join("&"),
        conditions,
        kind: SubgroupKind::Auto,
    }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Population constraint first, then manual, then automatic subgroups.
pub fn build_constraint_set(
    manual: &[SubgroupSpec],
    auto: &[SubgroupSpec],
    c_default: f64,
    distance: DistanceKind,
    c_overrides: &BTreeMap<String, f64>,
) -> Result<Vec<ConstraintSpec>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for spec in std::iter::once(&SubgroupSpec::full_population())
        .chain(manual)
        .chain(auto)
    {
        if !seen.insert(spec.name.clone()) {
            return Err(SurvError::DuplicateName(spec.name.clone()));
        }
        let c = c_overrides.get(&spec.name).copied().unwrap_or(c_default);
        if !(c >= 0.0) {
            return Err(SurvError::InvalidConfig(format!("slack for `{}` must be >= 0", spec.name)));
        }
        out.push(ConstraintSpec {
            subgroup: spec.clone(),
            c,
            distance,
        });
    }
    Ok(out)
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Code(c) => write!(f, "#{c}"),
            Value::Label(l) => write!(f, "{l}"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.test {
            Test::Equals(v) => write!(f, "{}={v}", self.feature),
            Test::InSet(vs) => {
                let parts: Vec<String> = vs.iter().map(ToString::to_string).collect();
                write!(f, "{}={}", self.feature, parts.join("|"))
            }
            Test::Interval(lo, hi) => write!(f, "{} in [{lo:?},{hi:?}]", self.feature),
        }
    }
}

/// Subgroup definitions file: one subgroup per line,
/// `name; feature=value; feature=v1|v2; feature in [lo,hi]`.
/// Values are labels, or numeric codes when prefixed with `#`. Blank lines
/// and `#` comments are skipped.
pub fn write_subgroup_file(specs: &[SubgroupSpec]) -> String {
    let mut out = String::new();
    for s in specs.iter().filter(|s| s.kind != SubgroupKind::FullPopulation) {
        let mut line = s.name.clone();
        for c in &s.conditions {
            line.push_str("; ");
            line.push_str(&c.to_string());
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_subgroup_file(text: &str) -> Result<Vec<SubgroupSpec>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| SurvError::SubgroupSyntax {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut parts = line.split(';').map(str::trim);
        let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| err("missing name"))?;
        let mut conditions = Vec::new();
        for part in parts.filter(|p| !p.is_empty()) {
            conditions.push(parse_condition(part).map_err(|m| err(&m))?);
        }
        out.push(SubgroupSpec::manual(name, conditions));
    }
    Ok(out)
}

fn parse_value(s: &str) -> std::result::Result<Value, String> {
    let s = s.trim();
    if let Some(code) = s.strip_prefix('#') {
        code.parse().map(Value::Code).map_err(|_| format!("bad code `{s}`"))
    } else if s.is_empty() {
        Err("empty value".into())
    } else {
        Ok(Value::Label(s.to_string()))
    }
}

fn parse_condition(part: &str) -> std::result::Result<Condition, String> {
    let interval = part
        .split_once('∈')
        .or_else(|| part.split_once(" in "));
    if let Some((feature, range)) = interval {
        let range = range.trim();
        let inner = range
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| format!("expected [lo,hi] in `{part}`"))?;
        let (lo, hi) = inner.split_once(',').ok_or_else(|| format!("expected [lo,hi] in `{part}`"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad bound in `{part}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad bound in `{part}`"))?;
        return Ok(Condition {
            feature: feature.trim().to_string(),
            test: Test::Interval(lo, hi),
        });
    }
    let (feature, values) = part.split_once('=').ok_or_else(|| format!("expected feature=value in `{part}`"))?;
    let values: Vec<Value> = values.split('|').map(parse_value).collect::<std::result::Result<_, _>>()?;
    let test = if values.len() == 1 {
        Test::Equals(values.into_iter().next().unwrap())
    } else {
        Test::InSet(values)
    };
    Ok(Condition {
        feature: feature.trim().to_string(),
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CategoricalMap, SurvivalRecord};

    fn dataset(rows: &[(f64, f64, f64)]) -> DiscreteDataset {
        let mut categorical_map = CategoricalMap::new();
        categorical_map.insert("sex".into(), vec!["f".into(), "m".into()]);
        categorical_map.insert("smoker".into(), vec!["no".into(), "yes".into()]);
        DiscreteDataset {
            records: rows
                .iter()
                .map(|&(age, sex, smoker)| SurvivalRecord {
                    features: vec![age, sex, smoker],
                    time: 1,
                    event: true,
                })
                .collect(),
            tau: 1,
            feature_names: vec!["age".into(), "sex".into(), "smoker".into()],
            categorical_map,
        }
    }

    #[test]
    fn membership_examples() {
        let d = dataset(&[(30.0, 0.0, 1.0), (37.0, 1.0, 1.0), (52.0, 1.0, 0.0)]);
        assert_eq!(membership(&SubgroupSpec::full_population(), &d).unwrap(), vec![true; 3]);
        let male = SubgroupSpec::manual(
            "male",
            vec![Condition { feature: "sex".into(), test: Test::Equals(Value::Label("m".into())) }],
        );
        assert_eq!(membership(&male, &d).unwrap(), vec![false, true, true]);
        let by_code = SubgroupSpec::manual(
            "female",
            vec![Condition { feature: "sex".into(), test: Test::Equals(Value::Code(0.0)) }],
        );
        assert_eq!(membership(&by_code, &d).unwrap(), vec![true, false, false]);
        let combo = SubgroupSpec::manual(
            "age35to40_smoker",
            vec![
                Condition { feature: "age".into(), test: Test::Interval(35.0, 40.0) },
                Condition { feature: "smoker".into(), test: Test::Equals(Value::Label("yes".into())) },
            ],
        );
        assert_eq!(membership(&combo, &d).unwrap(), vec![false, true, false]);
        let empty = SubgroupSpec::manual(
            "nobody",
            vec![Condition { feature: "age".into(), test: Test::Interval(90.0, 99.0) }],
        );
        assert_eq!(membership(&empty, &d).unwrap(), vec![false; 3]);
        let unknown = SubgroupSpec::manual(
            "x",
            vec![Condition { feature: "height".into(), test: Test::Interval(0.0, 1.0) }],
        );
        assert!(matches!(membership(&unknown, &d), Err(SurvError::UnknownFeature(_))));
    }

    fn binary_split(n_male: usize, n_female: usize) -> DiscreteDataset {
        let mut rows = vec![(40.0, 1.0, 0.0); n_male];
        rows.extend(vec![(40.0, 0.0, 0.0); n_female]);
        let mut d = dataset(&rows);
        d.feature_names.truncate(2);
        d.categorical_map.remove("smoker");
        for r in &mut d.records {
            r.features.truncate(2);
        }
        d
    }

    #[test]
    fn auto_select_binary_feature() {
        let d = binary_split(60, 40);
        let got = auto_select(&d, 10, 0.8, 3).unwrap();
        let names: Vec<&str> = got.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["sex=m", "sex=f"]);
        assert!(auto_select(&d, 1000, 0.8, 3).unwrap().is_empty());
    }

    #[test]
    fn auto_select_rejects_overlapping_candidates() {
        // smoker=yes coincides with sex=m: overlap 1.0 > 0.8
        let mut rows = vec![(40.0, 1.0, 1.0); 50];
        rows.extend(vec![(40.0, 0.0, 0.0); 30]);
        let d = dataset(&rows);
        let got = auto_select(&d, 5, 0.8, 2).unwrap();
        let names: Vec<&str> = got.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["sex=m", "sex=f"]);
    }

    #[test]
    fn auto_select_requires_categorical() {
        let mut d = binary_split(3, 3);
        d.categorical_map.clear();
        assert!(matches!(auto_select(&d, 1, 0.8, 2), Err(SurvError::NoCategoricalFeatures)));
    }

    #[test]
    fn constraint_set_layout() {
        let none = build_constraint_set(&[], &[], 0.01, DistanceKind::L2, &BTreeMap::new()).unwrap();
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].subgroup.kind, SubgroupKind::FullPopulation);

        let manual: Vec<SubgroupSpec> = (0..3).map(|i| SubgroupSpec::manual(&format!("m{i}"), vec![])).collect();
        let auto: Vec<SubgroupSpec> = (0..8)
            .map(|i| SubgroupSpec { name: format!("a{i}"), conditions: vec![], kind: SubgroupKind::Auto })
            .collect();
        let mut overrides = BTreeMap::new();
        overrides.insert("m1".to_string(), 0.5);
        let set = build_constraint_set(&manual, &auto, 0.01, DistanceKind::L2, &overrides).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(set[0].name(), POPULATION_NAME);
        assert_eq!(set[2].c, 0.5);
        assert_eq!(set[3].c, 0.01);

        let dup = vec![SubgroupSpec::manual("m0", vec![]), SubgroupSpec::manual("m0", vec![])];
        assert!(matches!(
            build_constraint_set(&dup, &[], 0.01, DistanceKind::L2, &BTreeMap::new()),
            Err(SurvError::DuplicateName(_))
        ));
    }

    #[test]
    fn subgroup_file_round_trip() {
        let text = "# demographic bins\nmale; sex=m\nmid_age_smoker; age in [35,40]; smoker=yes\nsome; sex=#0|#1\nunicode; age∈[1,2]\n";
        let specs = parse_subgroup_file(text).unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[1].conditions[0].test, Test::Interval(35.0, 40.0));
        assert_eq!(specs[2].conditions[0].test, Test::InSet(vec![Value::Code(0.0), Value::Code(1.0)]));
        let again = parse_subgroup_file(&write_subgroup_file(&specs)).unwrap();
        assert_eq!(again, specs);
        assert!(matches!(parse_subgroup_file("bad; age"), Err(SurvError::SubgroupSyntax { line: 1, .. })));
    }
}
