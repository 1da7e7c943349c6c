use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;

use super::{read_json, BopError, CamerasMeta, DatasetLayout, GtDoc, CAMERAS, SCENE_GT};
use crate::ObjectId;

/// Scenario key for scenes recorded without a tag.
pub const UNTAGGED_SCENARIO: &str = "untagged";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioStats {
    pub instances: u64,
    pub frames: u64,
    pub annotation_time_s: f64,
    pub per_class: BTreeMap<ObjectId, u64>,
}

impl Add for ScenarioStats {
    type Output = ScenarioStats;

    fn add(mut self, rhs: ScenarioStats) -> ScenarioStats {
        self.instances += rhs.instances;
        self.frames += rhs.frames;
        self.annotation_time_s += rhs.annotation_time_s;
        for (k, v) in rhs.per_class {
            *self.per_class.entry(k).or_default() += v;
        }
        self
    }
}

/// Instance and frame counts, overall and per scenario tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStats {
    pub total: ScenarioStats,
    pub per_scenario: BTreeMap<String, ScenarioStats>,
}

impl DatasetStats {
    pub fn total_instances(&self) -> u64 {
        self.total.instances
    }

    pub fn total_frames(&self) -> u64 {
        self.total.frames
    }

    pub fn per_class(&self) -> &BTreeMap<ObjectId, u64> {
        &self.total.per_class
    }

    /// Mean wall time per annotated instance, seconds.
    pub fn seconds_per_instance(&self) -> Option<f64> {
        (self.total.instances > 0).then(|| self.total.annotation_time_s / self.total.instances as f64)
    }

    pub fn from_scenarios(per_scenario: BTreeMap<String, ScenarioStats>) -> Self {
        let total = per_scenario.values().cloned().fold(ScenarioStats::default(), Add::add);
        Self { total, per_scenario }
    }
}

impl Add for DatasetStats {
    type Output = DatasetStats;

    fn add(self, rhs: DatasetStats) -> DatasetStats {
        let mut per_scenario = self.per_scenario;
        for (k, v) in rhs.per_scenario {
            let e = per_scenario.remove(&k).unwrap_or_default();
            per_scenario.insert(k, e + v);
        }
        DatasetStats { total: self.total + rhs.total, per_scenario }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<(&str, &ScenarioStats)> =
            self.per_scenario.iter().map(|(k, v)| (k.as_str(), v)).chain(std::iter::once(("Total", &self.total))).collect();
        let row = |f: &mut fmt::Formatter<'_>, label: &str, cell: &dyn Fn(&ScenarioStats) -> String| -> fmt::Result {
            write!(f, "{label:<24}")?;
            for (_, s) in &cols {
                write!(f, " {:>12}", cell(s))?;
            }
            writeln!(f)
        };
        write!(f, "{:<24}", "Scenario")?;
        for (name, _) in &cols {
            write!(f, " {name:>12}")?;
        }
        writeln!(f)?;
        row(f, "Number of instances", &|s| s.instances.to_string())?;
        row(f, "Number of frames", &|s| s.frames.to_string())?;
        row(f, "Annotation time [min]", &|s| format!("{:.1}", s.annotation_time_s / 60.0))?;
        let classes: Vec<ObjectId> = self.total.per_class.keys().copied().collect();
        for c in classes {
            row(f, &format!("Object {c} instances"), &|s| s.per_class.get(&c).copied().unwrap_or(0).to_string())?;
        }
        Ok(())
    }
}

/// Counts frames (images) and instances from the JSON documents only.
pub fn stats(layout: &DatasetLayout) -> Result<DatasetStats, BopError> {
    let mut per_scenario: BTreeMap<String, ScenarioStats> = BTreeMap::new();
    for scene_id in layout.scene_ids()? {
        let dir = layout.scene_dir(scene_id);
        let meta: CamerasMeta = read_json(&dir.join(CAMERAS))?;
        let gt: GtDoc = read_json(&dir.join(SCENE_GT))?;
        let s = per_scenario.entry(meta.scenario.unwrap_or_else(|| UNTAGGED_SCENARIO.to_string())).or_default();
        s.frames += meta.images.len() as u64;
        s.annotation_time_s += meta.annotation_time_s;
        for e in gt.values().flatten() {
            s.instances += 1;
            *s.per_class.entry(e.obj_id).or_default() += 1;
        }
    }
    Ok(DatasetStats::from_scenarios(per_scenario))
}
