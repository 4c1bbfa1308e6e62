//! Synthetic guest→host networks with a planted same-group preference.
//!
//! Every guest draws a number of stays; each stay picks a host with
//! probability proportional to
//! `attractiveness(h) · (1 + bias if same group) · affinity(guest race, price tier of h)`.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    build_network, AttributeSet, BipartiteNetwork, EdgeSpec, Gender, HostProfile, NodeSpec, PropertyType, Race,
    SliceKey,
};
use crate::view::Attribute;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activity {
    Constant { stays: u32 },
    /// P(k) ∝ k^-exponent on `min..=max`.
    PowerLaw { exponent: f64, min: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attractiveness {
    Uniform,
    /// Pareto weights with tail exponent `exponent` (> 1).
    PowerLaw { exponent: f64 },
}

/// Weekly prices correlated with host race and guest preferences over price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceModel {
    pub tiers: Vec<f64>,
    /// Tier probabilities for White, Asian and Black hosts.
    pub tier_probs: [Vec<f64>; 3],
    /// Selection multiplier per tier for White, Asian and Black guests.
    pub guest_affinity: [Vec<f64>; 3],
    /// Hosts own `1..=max_properties` properties, uniformly.
    pub max_properties: u32,
}

/// Fields missing from a JSON spec take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_guests: usize,
    pub n_hosts: usize,
    /// Female, Male.
    pub gender_shares: [f64; 2],
    /// White, Asian, Black.
    pub race_shares: [f64; 3],
    pub activity: Activity,
    pub attractiveness: Attractiveness,
    /// Attribute along which the same-group preference acts.
    pub bias_attribute: Attribute,
    pub bias: f64,
    /// Same-group-only selection (the `bias → ∞` limit).
    #[serde(default)]
    pub exclusive: bool,
    #[serde(default)]
    pub price: Option<PriceModel>,
    pub city: String,
    pub property_type: PropertyType,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_guests: 1000,
            n_hosts: 100,
            gender_shares: [0.6, 0.4],
            race_shares: [0.6, 0.2, 0.2],
            activity: Activity::Constant { stays: 2 },
            attractiveness: Attractiveness::Uniform,
            bias_attribute: Attribute::Gender,
            bias: 0.0,
            exclusive: false,
            price: None,
            city: "Synth".into(),
            property_type: PropertyType::Full,
            seed: 0,
        }
    }
}

fn check_shares(name: &str, shares: &[f64]) -> Result<(), SynthError> {
    if shares.iter().any(|s| !(*s >= 0.0)) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidSpec(format!("{name} {shares:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_guests == 0 || self.n_hosts < 2 {
            return bad(format!("need ≥1 guest and ≥2 hosts, got {} and {}", self.n_guests, self.n_hosts));
        }
        check_shares("gender_shares", &self.gender_shares)?;
        check_shares("race_shares", &self.race_shares)?;
        if !(self.bias >= -1.0) {
            return bad(format!("bias {} below -1", self.bias));
        }
        if self.bias_attribute == Attribute::AgeQuintile {
            return bad("bias attribute must be gender or race".into());
        }
        match self.activity {
            Activity::Constant { stays: 0 } => return bad("constant activity must be ≥ 1".into()),
            Activity::PowerLaw { exponent, min, max } if min == 0 || max < min || !exponent.is_finite() => {
                return bad(format!("power-law activity needs 1 ≤ min ≤ max, got {min}..{max}"))
            }
            _ => {}
        }
        if let Attractiveness::PowerLaw { exponent } = self.attractiveness {
            if !(exponent > 1.0) {
                return bad(format!("attractiveness exponent {exponent} must exceed 1"));
            }
        }
        if let Some(p) = &self.price {
            let k = p.tiers.len();
            if k == 0 || p.max_properties == 0 {
                return bad("price model needs tiers and max_properties ≥ 1".into());
            }
            for probs in &p.tier_probs {
                check_shares("tier_probs", probs)?;
                if probs.len() != k {
                    return bad("tier_probs length differs from tiers".into());
                }
            }
            for aff in &p.guest_affinity {
                if aff.len() != k || aff.iter().any(|a| !(*a >= 0.0)) {
                    return bad("guest_affinity must hold one non-negative weight per tier".into());
                }
            }
        }
        Ok(())
    }
}

/// What the generator planted, for checking a detector against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Group label of every guest and host along the bias attribute.
    pub guest_groups: BTreeMap<String, String>,
    pub host_groups: BTreeMap<String, String>,
    pub total_stays: u64,
}

/// Group sizes proportional to `shares` (largest remainder), in shuffled order.
fn assign_groups(n: usize, shares: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut missing = n - counts.iter().sum::<usize>();
    for &g in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[g] += 1;
        missing -= 1;
    }
    let mut out: Vec<usize> = counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c)).collect();
    out.shuffle(rng);
    out
}

const GENDERS: [Gender; 2] = [Gender::Female, Gender::Male];
const RACES: [Race; 3] = [Race::White, Race::Asian, Race::Black];

fn person(gender: usize, race: usize, rng: &mut ChaCha8Rng) -> AttributeSet {
    AttributeSet {
        gender: GENDERS[gender],
        gender_conf: 1.0,
        race: RACES[race],
        race_conf: 1.0,
        age_years: Some(rng.gen_range(20..70)),
        age_conf: 1.0,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(BipartiteNetwork, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let guest_gender = assign_groups(spec.n_guests, &spec.gender_shares, &mut rng);
    let guest_race = assign_groups(spec.n_guests, &spec.race_shares, &mut rng);
    let host_gender = assign_groups(spec.n_hosts, &spec.gender_shares, &mut rng);
    let host_race = assign_groups(spec.n_hosts, &spec.race_shares, &mut rng);
    let gw = (spec.n_guests.max(1) - 1).to_string().len().max(4);
    let hw = (spec.n_hosts - 1).to_string().len().max(4);
    let guest_id = |i: usize| format!("g{i:0gw$}");
    let host_id = |i: usize| format!("h{i:0hw$}");

    let guest_attrs: Vec<AttributeSet> = (0..spec.n_guests)
        .map(|i| person(guest_gender[i], guest_race[i], &mut rng))
        .collect();
    let host_attrs: Vec<AttributeSet> = (0..spec.n_hosts)
        .map(|i| person(host_gender[i], host_race[i], &mut rng))
        .collect();
    let attractiveness: Vec<f64> = match spec.attractiveness {
        Attractiveness::Uniform => vec![1.0; spec.n_hosts],
        Attractiveness::PowerLaw { exponent } => (0..spec.n_hosts)
            .map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / (exponent - 1.0)))
            .collect(),
    };
    let mut tiers = vec![0usize; spec.n_hosts];
    let mut profiles = vec![None; spec.n_hosts];
    if let Some(p) = &spec.price {
        let dists: Vec<WeightedIndex<f64>> = p
            .tier_probs
            .iter()
            .map(|probs| WeightedIndex::new(probs).map_err(|e| SynthError::InvalidSpec(e.to_string())))
            .collect::<Result<_, _>>()?;
        for h in 0..spec.n_hosts {
            tiers[h] = dists[host_race[h]].sample(&mut rng);
            profiles[h] = Some(HostProfile {
                num_properties: rng.gen_range(1..=p.max_properties),
                weekly_price: p.tiers[tiers[h]],
            });
        }
    }

    let (guest_group, host_group, labels): (&[usize], &[usize], &[&str]) = match spec.bias_attribute {
        Attribute::Race => (&guest_race, &host_race, &["W", "A", "B"]),
        _ => (&guest_gender, &host_gender, &["F", "M"]),
    };
    // One host distribution per (bias group, race) of the guest.
    let mut choosers: BTreeMap<(usize, usize), WeightedIndex<f64>> = BTreeMap::new();
    for (&g, &r) in guest_group.iter().zip(&guest_race) {
        if choosers.contains_key(&(g, r)) {
            continue;
        }
        let weights: Vec<f64> = (0..spec.n_hosts)
            .map(|h| {
                let same = host_group[h] == g;
                let bias = if spec.exclusive {
                    if same {
                        1.0
                    } else {
                        0.0
                    }
                } else if same {
                    1.0 + spec.bias
                } else {
                    1.0
                };
                let affinity = spec.price.as_ref().map_or(1.0, |p| p.guest_affinity[r][tiers[h]]);
                attractiveness[h] * bias * affinity
            })
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| {
            SynthError::InvalidSpec(format!(
                "guests in group {} (race {}) have no host they can choose",
                labels[g],
                RACES[r].code()
            ))
        })?;
        choosers.insert((g, r), dist);
    }
    let activity = match &spec.activity {
        Activity::Constant { .. } => None,
        Activity::PowerLaw { exponent, min, max } => Some(
            WeightedIndex::new((*min..=*max).map(|k| (k as f64).powf(-exponent)))
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
        ),
    };

    let mut weights: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    let mut total = 0u64;
    for g in 0..spec.n_guests {
        let stays = match (&spec.activity, &activity) {
            (Activity::Constant { stays }, _) => *stays,
            (Activity::PowerLaw { min, .. }, Some(d)) => min + d.sample(&mut rng) as u32,
            _ => unreachable!(),
        };
        let chooser = &choosers[&(guest_group[g], guest_race[g])];
        for _ in 0..stays {
            *weights.entry((g, chooser.sample(&mut rng))).or_default() += 1;
            total += 1;
        }
    }

    let mut used_guest = vec![false; spec.n_guests];
    let mut used_host = vec![false; spec.n_hosts];
    for &(g, h) in weights.keys() {
        used_guest[g] = true;
        used_host[h] = true;
    }
    let nodes = (0..spec.n_guests)
        .filter(|&g| used_guest[g])
        .map(|g| NodeSpec::guest(guest_id(g), guest_attrs[g]))
        .chain(
            (0..spec.n_hosts)
                .filter(|&h| used_host[h])
                .map(|h| NodeSpec::host(host_id(h), host_attrs[h], profiles[h])),
        );
    let edges = weights
        .iter()
        .map(|(&(g, h), &w)| EdgeSpec::new(guest_id(g), host_id(h), w));
    let network = build_network(nodes, edges, SliceKey::new(spec.city.clone(), spec.property_type))
        .expect("generated rows are consistent");
    let truth = GroundTruth {
        spec: spec.clone(),
        guest_groups: (0..spec.n_guests)
            .filter(|&g| used_guest[g])
            .map(|g| (guest_id(g), labels[guest_group[g]].to_string()))
            .collect(),
        host_groups: (0..spec.n_hosts)
            .filter(|&h| used_host[h])
            .map(|h| (host_id(h), labels[host_group[h]].to_string()))
            .collect(),
        total_stays: total,
    };
    Ok((network, truth))
}
