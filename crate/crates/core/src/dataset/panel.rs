use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::hmd::{MortalityTable, Sex};
use crate::error::DataError;
use crate::linalg::DenseMatrix;

/// How log rates are normalized per age before modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocessing {
    /// Subtract the per-age mean over the reference years.
    #[default]
    Center,
    /// Center, then divide by the per-age standard deviation over the reference years.
    Standardize,
}

/// One group's centered log-mortality surface: `y[t, i] = (ln m[t, i] - a[i]) / s[i]`
/// with `s = 1` unless the panel was standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub group: String,
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub y: DenseMatrix,
    pub intercept: Array1<f64>,
    /// Per-age scale factors, present only for standardized panels.
    pub scale: Option<Array1<f64>>,
}

impl Panel {
    /// Builds a panel from raw log rates, estimating the intercept (and scale)
    /// from the rows listed in `reference`.
    pub fn from_log_rates(
        group: impl Into<String>,
        years: Vec<i32>,
        ages: Vec<u32>,
        log_rates: &DenseMatrix,
        reference: &[usize],
        preprocessing: Preprocessing,
    ) -> Result<Self, DataError> {
        let (t, n) = log_rates.dim();
        if t != years.len() || n != ages.len() || t == 0 || n == 0 {
            return Err(DataError::InvalidShape(format!(
                "log rates are {t}x{n} for {} years and {} ages",
                years.len(),
                ages.len()
            )));
        }
        if reference.is_empty() {
            return Err(DataError::InvalidShape("no reference rows for centering".into()));
        }
        let rows = log_rates.select(Axis(0), reference);
        let intercept = rows.mean_axis(Axis(0)).expect("non-empty reference");
        let scale = match preprocessing {
            Preprocessing::Center => None,
            Preprocessing::Standardize => {
                let centered = &rows - &intercept;
                let sd = centered.map_axis(Axis(0), |col| {
                    let var = col.dot(&col) / col.len() as f64;
                    let sd = var.sqrt();
                    if sd > 0.0 {
                        sd
                    } else {
                        1.0
                    }
                });
                Some(sd)
            }
        };
        let mut y = log_rates - &intercept;
        if let Some(s) = &scale {
            y /= s;
        }
        Ok(Self { group: group.into(), years, ages, y, intercept, scale })
    }

    pub fn rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn ages_len(&self) -> usize {
        self.y.ncols()
    }

    /// Undoes centering (and scaling) of an arbitrary `rows x N` block.
    pub fn to_log_rates(&self, block: &DenseMatrix) -> DenseMatrix {
        let mut out = block.clone();
        if let Some(s) = &self.scale {
            out *= s;
        }
        out + &self.intercept
    }

    /// Death rates `exp(y * s + a)` of the stored data.
    pub fn rates(&self) -> DenseMatrix {
        self.to_log_rates(&self.y).mapv(f64::exp)
    }

    pub fn scale_or_ones(&self) -> Array1<f64> {
        self.scale.clone().unwrap_or_else(|| Array1::ones(self.ages_len()))
    }

    /// Keeps only the listed rows; intercept and scale are carried over unchanged.
    pub fn select_rows(&self, rows: &[usize]) -> Panel {
        Panel {
            group: self.group.clone(),
            years: rows.iter().map(|&i| self.years[i]).collect(),
            ages: self.ages.clone(),
            y: self.y.select(Axis(0), rows),
            intercept: self.intercept.clone(),
            scale: self.scale.clone(),
        }
    }
}

/// Extracts one rate column over an inclusive age/year window and centers it per age.
pub fn build_panel(
    table: &MortalityTable,
    column: Sex,
    group: &str,
    ages: (u32, u32),
    years: (i32, i32),
    preprocessing: Preprocessing,
) -> Result<Panel, DataError> {
    if ages.0 > ages.1 || years.0 > years.1 {
        return Err(DataError::InvalidShape(format!("empty window ages {ages:?}, years {years:?}")));
    }
    let age_list: Vec<u32> = (ages.0..=ages.1).collect();
    let year_list: Vec<i32> = (years.0..=years.1).collect();
    let mut log_rates = Array2::<f64>::zeros((year_list.len(), age_list.len()));
    for (t, &year) in year_list.iter().enumerate() {
        for (i, &age) in age_list.iter().enumerate() {
            let rate = table.rate(column, year, age).ok_or_else(|| DataError::MissingCell {
                group: group.to_string(),
                year,
                age,
            })?;
            if rate <= 0.0 || !rate.is_finite() {
                return Err(DataError::NonPositiveRate { group: group.to_string(), year, age, rate });
            }
            log_rates[[t, i]] = rate.ln();
        }
    }
    let all: Vec<usize> = (0..year_list.len()).collect();
    Panel::from_log_rates(group, year_list, age_list, &log_rates, &all, preprocessing)
}

/// Splits at `cutoff` (train holds years <= cutoff). Both halves are re-centered
/// with statistics from the training years only.
pub fn split_train_test(panel: &Panel, cutoff: i32) -> Result<(Panel, Panel), DataError> {
    let first = *panel.years.first().expect("panel has rows");
    let last = *panel.years.last().expect("panel has rows");
    if cutoff < first || cutoff >= last {
        return Err(DataError::CutoffOutOfRange { cutoff, first, last });
    }
    let preprocessing = if panel.scale.is_some() {
        Preprocessing::Standardize
    } else {
        Preprocessing::Center
    };
    let log_rates = panel.to_log_rates(&panel.y);
    let train_rows: Vec<usize> = (0..panel.rows()).filter(|&i| panel.years[i] <= cutoff).collect();
    let test_rows: Vec<usize> = (0..panel.rows()).filter(|&i| panel.years[i] > cutoff).collect();
    let train_log = log_rates.select(Axis(0), &train_rows);
    let train_years: Vec<i32> = train_rows.iter().map(|&i| panel.years[i]).collect();
    let all_train: Vec<usize> = (0..train_rows.len()).collect();
    let train = Panel::from_log_rates(
        panel.group.clone(),
        train_years,
        panel.ages.clone(),
        &train_log,
        &all_train,
        preprocessing,
    )?;
    let test_log = log_rates.select(Axis(0), &test_rows);
    let mut test_y = test_log - &train.intercept;
    if let Some(s) = &train.scale {
        test_y /= s;
    }
    let test = Panel {
        group: panel.group.clone(),
        years: test_rows.iter().map(|&i| panel.years[i]).collect(),
        ages: panel.ages.clone(),
        y: test_y,
        intercept: train.intercept.clone(),
        scale: train.scale.clone(),
    };
    Ok((train, test))
}

/// Age-aligned panels for groups `1..K`, K >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPanel {
    panels: Vec<Panel>,
}

impl GroupedPanel {
    pub fn new(panels: Vec<Panel>) -> Result<Self, DataError> {
        if panels.len() < 2 {
            return Err(DataError::InvalidShape(format!(
                "need at least two groups, got {}",
                panels.len()
            )));
        }
        let ages = &panels[0].ages;
        for p in &panels {
            if &p.ages != ages {
                return Err(DataError::AgeMismatch(format!(
                    "group `{}` ages differ from group `{}`",
                    p.group, panels[0].group
                )));
            }
            if p.rows() == 0 {
                return Err(DataError::InvalidShape(format!("group `{}` has no rows", p.group)));
            }
            if !p.y.iter().all(|v| v.is_finite()) {
                return Err(DataError::InvalidShape(format!("group `{}` has non-finite entries", p.group)));
            }
        }
        for (i, p) in panels.iter().enumerate() {
            if panels[..i].iter().any(|q| q.group == p.group) {
                return Err(DataError::InvalidShape(format!("duplicate group label `{}`", p.group)));
            }
        }
        Ok(Self { panels })
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    pub fn groups(&self) -> usize {
        self.panels.len()
    }

    /// Number of ages N.
    pub fn ages_len(&self) -> usize {
        self.panels[0].ages_len()
    }

    /// Total rows T = sum of T_k.
    pub fn total_rows(&self) -> usize {
        self.panels.iter().map(Panel::rows).sum()
    }

    pub fn group_rows(&self) -> Vec<usize> {
        self.panels.iter().map(Panel::rows).collect()
    }

    pub fn group_index(&self, label: &str) -> Option<usize> {
        self.panels.iter().position(|p| p.group == label)
    }

    /// The stacked `T x N` matrix `(Y_1; ...; Y_K)`.
    pub fn stacked(&self) -> DenseMatrix {
        let views: Vec<_> = self.panels.iter().map(|p| p.y.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("age-aligned panels")
    }

    /// Keeps the listed rows of each group (one list per group).
    pub fn select_rows(&self, rows: &[Vec<usize>]) -> Result<GroupedPanel, DataError> {
        if rows.len() != self.panels.len() {
            return Err(DataError::InvalidShape("one row list per group required".into()));
        }
        GroupedPanel::new(self.panels.iter().zip(rows).map(|(p, r)| p.select_rows(r)).collect())
    }

    /// Tidy CSV: `group,year,age,log_rate_centered,intercept`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,year,age,log_rate_centered,intercept\n");
        for p in &self.panels {
            for (t, year) in p.years.iter().enumerate() {
                for (i, age) in p.ages.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{},{}", p.group, year, age, p.y[[t, i]], p.intercept[i]);
                }
            }
        }
        out
    }
}
