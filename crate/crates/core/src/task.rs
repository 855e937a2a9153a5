//! Catalog of oral motor assessment tasks a patient records.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    /// Recording stops automatically after `duration_s`.
    FixedS,
    /// The patient stops the recording; `duration_s` is the upper bound.
    MaxS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskKind {
    pub key: String,
    pub title: String,
    pub description: String,
    pub duration_mode: DurationMode,
    pub duration_s: f64,
}

impl TaskKind {
    fn seed(key: &str, title: &str, description: &str, mode: DurationMode, secs: f64) -> Self {
        Self {
            key: key.into(),
            title: title.into(),
            description: description.into(),
            duration_mode: mode,
            duration_s: secs,
        }
    }
}

pub const MAXIMUM_SMILE: &str = "maximum_smile";
pub const LIPS_STRETCHING: &str = "lips_stretching";
pub const LIPS_PROTRUSION: &str = "lips_protrusion";
pub const MAXIMUM_MOUTH_OPENING: &str = "maximum_mouth_opening";
pub const MOUTH_OPENING_CLOSING: &str = "mouth_opening_closing";
pub const MOUTH_PROTRUSION_STRETCHING: &str = "mouth_protrusion_stretching";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCatalog {
    tasks: Vec<TaskKind>,
}

impl Default for TaskCatalog {
    fn default() -> Self {
        use DurationMode::*;
        Self {
            tasks: vec![
                TaskKind::seed(
                    MAXIMUM_SMILE,
                    "Maximum smile",
                    "Smile as widely as you can and hold it.",
                    FixedS,
                    5.0,
                ),
                TaskKind::seed(
                    LIPS_STRETCHING,
                    "Lips stretching",
                    "Stretch your lips sideways and hold the position.",
                    FixedS,
                    5.0,
                ),
                TaskKind::seed(
                    LIPS_PROTRUSION,
                    "Lips protrusion",
                    "Push your lips forward as far as you can and hold the position.",
                    FixedS,
                    5.0,
                ),
                TaskKind::seed(
                    MAXIMUM_MOUTH_OPENING,
                    "Maximum mouth opening (5 times)",
                    "Open your mouth as wide as you can, then close it. Repeat five times.",
                    MaxS,
                    30.0,
                ),
                TaskKind::seed(
                    MOUTH_OPENING_CLOSING,
                    "Mouth opening and closing",
                    "Open and close your mouth repeatedly until the recording stops.",
                    FixedS,
                    30.0,
                ),
                TaskKind::seed(
                    MOUTH_PROTRUSION_STRETCHING,
                    "Mouth protrusion and stretching",
                    "Alternate pushing your lips forward and stretching them sideways.",
                    FixedS,
                    30.0,
                ),
            ],
        }
    }
}

impl TaskCatalog {
    pub fn new(tasks: Vec<TaskKind>) -> Self {
        Self { tasks }
    }

    pub fn get(&self, key: &str) -> Option<&TaskKind> {
        self.tasks.iter().find(|t| t.key == key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskKind> {
        self.tasks.iter()
    }
}
