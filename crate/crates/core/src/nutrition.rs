//! Healthy-plate scoring.
//!
//! Category shares are pixel-area percentages of the food on the plate. The
//! balance level caps fruit and vegetables at 50 and protein and whole
//! grains at 25 each, so an ideal plate scores exactly 100; the healthy
//! fraction is the share of food that belongs to any healthy category.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label reserved for the bare plate surface.
pub const PLATE_LABEL: &str = "plate";

/// Fruit and vegetables target, percent of the plate.
pub const PRODUCE_TARGET: f64 = 50.0;
/// Healthy protein and whole grain targets, percent of the plate each.
pub const QUARTER_TARGET: f64 = 25.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Fruit,
    Vegetable,
    HealthyProtein,
    WholeGrain,
    Junk,
    PlateSurface,
}

impl Category {
    pub fn is_healthy(self) -> bool {
        matches!(self, Category::Fruit | Category::Vegetable | Category::HealthyProtein | Category::WholeGrain)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    #[serde(default)]
    fruit: Vec<String>,
    #[serde(default)]
    vegetable: Vec<String>,
    #[serde(default)]
    protein: Vec<String>,
    #[serde(default)]
    whole_grain: Vec<String>,
    #[serde(default)]
    junk: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    plate: Vec<String>,
}

/// Food label to category mapping. Unknown labels are junk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    categories: BTreeMap<String, Category>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let file = TaxonomyFile {
            fruit: strings(&["apple", "orange", "banana", "grapes"]),
            vegetable: strings(&["broccoli", "red cabbage", "carrot", "tomato", "cucumber"]),
            protein: strings(&["fish", "chicken", "beans", "lentils", "nuts", "egg"]),
            whole_grain: strings(&["rice", "buckwheat", "wheat", "oats"]),
            // Potatoes do not count as a vegetable.
            junk: strings(&["potato", "fries", "chips"]),
            plate: Vec::new(),
        };
        Self::from_file(file).expect("default taxonomy is consistent")
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Taxonomy {
    fn from_file(file: TaxonomyFile) -> Result<Self> {
        let mut categories = BTreeMap::new();
        categories.insert(PLATE_LABEL.to_string(), Category::PlateSurface);
        let groups = [
            (file.fruit, Category::Fruit),
            (file.vegetable, Category::Vegetable),
            (file.protein, Category::HealthyProtein),
            (file.whole_grain, Category::WholeGrain),
            (file.junk, Category::Junk),
            (file.plate, Category::PlateSurface),
        ];
        for (labels, category) in groups {
            for label in labels {
                match categories.insert(label.clone(), category) {
                    Some(previous) if previous != category => {
                        return Err(Error::InvalidArgument(format!(
                            "label {label:?} listed as both {previous:?} and {category:?}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { categories })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut file = TaxonomyFile::default();
        for (label, category) in &self.categories {
            let list = match category {
                Category::Fruit => &mut file.fruit,
                Category::Vegetable => &mut file.vegetable,
                Category::HealthyProtein => &mut file.protein,
                Category::WholeGrain => &mut file.whole_grain,
                Category::Junk => &mut file.junk,
                Category::PlateSurface if label == PLATE_LABEL => continue,
                Category::PlateSurface => &mut file.plate,
            };
            list.push(label.clone());
        }
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    pub fn category(&self, label: &str) -> Category {
        self.categories.get(label).copied().unwrap_or(Category::Junk)
    }

    /// Every configured label, the plate label included.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn labels_in(&self, category: Category) -> impl Iterator<Item = &str> {
        self.categories.iter().filter(move |(_, c)| **c == category).map(|(l, _)| l.as_str())
    }
}

/// One classified food region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub region_id: u32,
    pub label: String,
    pub category: Category,
    pub pixel_count: usize,
    /// Share of all food pixels on the plate, in `[0, 1]`.
    pub fraction: f64,
}

/// Per-category percentages of the food on the plate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryShares {
    #[serde(rename = "f")]
    pub fruit: f64,
    #[serde(rename = "v")]
    pub vegetable: f64,
    #[serde(rename = "hp")]
    pub protein: f64,
    #[serde(rename = "wg")]
    pub whole_grain: f64,
    pub junk: f64,
}

impl CategoryShares {
    pub fn produce(&self) -> f64 {
        self.fruit + self.vegetable
    }

    pub fn healthy(&self) -> f64 {
        self.fruit + self.vegetable + self.protein + self.whole_grain
    }
}

/// Sums item fractions per category, as percentages. Several regions of the
/// same category simply add up; plate-surface items are ignored.
pub fn class_fractions(items: &[FoodItem]) -> Result<CategoryShares> {
    let food: Vec<&FoodItem> = items.iter().filter(|i| i.category != Category::PlateSurface).collect();
    if food.is_empty() {
        return Err(Error::NoFoodItems);
    }
    let total: f64 = food.iter().map(|i| i.fraction).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("item fractions sum to {total}, expected 1")));
    }
    let mut shares = CategoryShares::default();
    for item in food {
        let slot = match item.category {
            Category::Fruit => &mut shares.fruit,
            Category::Vegetable => &mut shares.vegetable,
            Category::HealthyProtein => &mut shares.protein,
            Category::WholeGrain => &mut shares.whole_grain,
            Category::Junk => &mut shares.junk,
            Category::PlateSurface => unreachable!("filtered above"),
        };
        *slot += 100.0 * item.fraction;
    }
    Ok(shares)
}

/// `min(f + v, 50) + min(hp, 25) + min(wg, 25)`.
pub fn balance_level(f: f64, v: f64, hp: f64, wg: f64) -> f64 {
    (f + v).min(PRODUCE_TARGET) + hp.min(QUARTER_TARGET) + wg.min(QUARTER_TARGET)
}

/// Healthy share of the food, `(f + v + hp + wg) / 100`.
pub fn healthy_fraction(f: f64, v: f64, hp: f64, wg: f64) -> f64 {
    (f + v + hp + wg) / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "Healthy food")]
    HealthyFood,
    #[serde(rename = "Moderately healthy")]
    ModeratelyHealthy,
    #[serde(rename = "Needs improvement")]
    NeedsImprovement,
    #[serde(rename = "Not a healthy plate")]
    NotHealthy,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::HealthyFood => "Healthy food",
            Verdict::ModeratelyHealthy => "Moderately healthy",
            Verdict::NeedsImprovement => "Needs improvement",
            Verdict::NotHealthy => "Not a healthy plate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthBand {
    pub name: Verdict,
    /// `100 - B`.
    pub error: f64,
}

/// Bands of 25 error points; each band's upper bound is inclusive.
pub fn band_of(balance: f64) -> HealthBand {
    let error = 100.0 - balance;
    let name = if error <= 25.0 {
        Verdict::HealthyFood
    } else if error <= 50.0 {
        Verdict::ModeratelyHealthy
    } else if error <= 75.0 {
        Verdict::NeedsImprovement
    } else {
        Verdict::NotHealthy
    };
    HealthBand { name, error }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateAssessment {
    #[serde(flatten)]
    pub shares: CategoryShares,
    /// Total food percentage; always 100.
    #[serde(rename = "T")]
    pub total: f64,
    #[serde(rename = "B")]
    pub balance: f64,
    #[serde(rename = "H")]
    pub healthy: f64,
    pub band: HealthBand,
    pub recommendations: Vec<String>,
    pub items: Vec<FoodItem>,
}

impl PlateAssessment {
    pub fn new(items: Vec<FoodItem>, taxonomy: &Taxonomy) -> Result<Self> {
        let shares = class_fractions(&items)?;
        let s = &shares;
        let balance = balance_level(s.fruit, s.vegetable, s.protein, s.whole_grain);
        let mut assessment = Self {
            shares,
            total: 100.0,
            balance,
            healthy: healthy_fraction(s.fruit, s.vegetable, s.protein, s.whole_grain),
            band: band_of(balance),
            recommendations: Vec::new(),
            items,
        };
        assessment.recommendations = recommend(&assessment, taxonomy);
        Ok(assessment)
    }

    /// Balance level rounded for display.
    pub fn balance_rounded(&self) -> i64 {
        self.balance.round() as i64
    }

    /// Healthy fraction as a rounded percentage.
    pub fn healthy_percent(&self) -> i64 {
        (100.0 * self.healthy).round() as i64
    }
}

fn examples(taxonomy: &Taxonomy, categories: &[Category]) -> String {
    let names: Vec<&str> = categories.iter().flat_map(|&c| taxonomy.labels_in(c).take(2)).collect();
    if names.is_empty() {
        String::new()
    } else {
        format!(" (for example {})", names.join(", "))
    }
}

/// Suggestions for moving the plate towards the ideal proportions.
///
/// Deficits and junk food are listed largest first, followed by notes for
/// any category above its cap. An ideal plate without junk gets none.
pub fn recommend(assessment: &PlateAssessment, taxonomy: &Taxonomy) -> Vec<String> {
    let s = &assessment.shares;
    let mut ranked: Vec<(f64, String)> = Vec::new();

    let produce_gap = PRODUCE_TARGET - s.produce();
    if produce_gap > EPS {
        ranked.push((
            produce_gap,
            format!(
                "Add fruits and vegetables: fill half the plate with colorful produce, {:.0}% more needed{}.",
                produce_gap,
                examples(taxonomy, &[Category::Vegetable, Category::Fruit])
            ),
        ));
    }
    let protein_gap = QUARTER_TARGET - s.protein;
    if protein_gap > EPS {
        ranked.push((
            protein_gap,
            format!(
                "Add healthy protein to fill a quarter of the plate, {:.0}% more needed{}.",
                protein_gap,
                examples(taxonomy, &[Category::HealthyProtein])
            ),
        ));
    }
    let grain_gap = QUARTER_TARGET - s.whole_grain;
    if grain_gap > EPS {
        ranked.push((
            grain_gap,
            format!(
                "Add whole grains to fill a quarter of the plate, {:.0}% more needed{}.",
                grain_gap,
                examples(taxonomy, &[Category::WholeGrain])
            ),
        ));
    }
    if s.junk > EPS {
        let named: BTreeSet<&str> =
            assessment.items.iter().filter(|i| i.category == Category::Junk).map(|i| i.label.as_str()).collect();
        let which = if named.is_empty() {
            String::new()
        } else {
            format!(" ({})", named.into_iter().collect::<Vec<_>>().join(", "))
        };
        ranked.push((s.junk, format!("Reduce junk food{which}: it makes up {:.0}% of the plate.", s.junk)));
    }
    // Stable: equal magnitudes keep the order above.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<String> = ranked.into_iter().map(|(_, text)| text).collect();

    if s.produce() > PRODUCE_TARGET + EPS {
        out.push(format!(
            "Fruits and vegetables cover {:.0}% of the plate; only 50% counts towards balance, rebalance the rest.",
            s.produce()
        ));
    }
    if s.protein > QUARTER_TARGET + EPS {
        out.push(format!(
            "Protein covers {:.0}% of the plate; only 25% counts towards balance, rebalance the rest.",
            s.protein
        ));
    }
    if s.whole_grain > QUARTER_TARGET + EPS {
        out.push(format!(
            "Whole grains cover {:.0}% of the plate; only 25% counts towards balance, rebalance the rest.",
            s.whole_grain
        ));
    }
    out
}
