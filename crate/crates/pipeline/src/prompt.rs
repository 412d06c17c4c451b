//! Structured counting prompts.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    OpenVocabulary,
    OpenEnded,
    OpenSubclass,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::OpenVocabulary => "open-vocabulary",
            Setting::OpenEnded => "open-ended",
            Setting::OpenSubclass => "open-subclass",
        }
    }

    /// Whether predicted names must be mapped onto ground-truth names before
    /// scoring.
    pub fn needs_name_matching(self) -> bool {
        !matches!(self, Setting::OpenVocabulary)
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "open-vocabulary" | "ov" => Ok(Setting::OpenVocabulary),
            "open-ended" | "oe" => Ok(Setting::OpenEnded),
            "open-subclass" | "os" => Ok(Setting::OpenSubclass),
            other => Err(format!(
                "unknown setting {other:?}; expected open-vocabulary, open-ended or open-subclass"
            )),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFormat {
    #[default]
    Json,
    Markdown,
}

impl FromStr for PromptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(PromptFormat::Json),
            "markdown" | "md" => Ok(PromptFormat::Markdown),
            other => Err(format!("unknown prompt format {other:?}; expected json or markdown")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub setting: Setting,
    pub persona: String,
    pub task: String,
    pub instructions: Vec<String>,
    pub output_format: String,
    /// Shown under `Examples` for open-vocabulary prompts and under `Answer`
    /// otherwise.
    pub examples: Vec<String>,
    #[serde(default)]
    pub format: PromptFormat,
}

impl PromptSpec {
    pub fn closing_key(&self) -> &'static str {
        match self.setting {
            Setting::OpenVocabulary => "Examples",
            _ => "Answer",
        }
    }

    pub fn with_format(mut self, format: PromptFormat) -> Self {
        self.format = format;
        self
    }
}

/// Renders the prompt. JSON output is a 4-space-indented object with keys
/// `Persona`, `Task`, `Instructions`, `Output format` and `Examples`/`Answer`,
/// in that order. Examples that parse as JSON are embedded as values.
pub fn build_count_prompt(spec: &PromptSpec) -> String {
    match spec.format {
        PromptFormat::Json => render_json(spec),
        PromptFormat::Markdown => render_markdown(spec),
    }
}

fn render_json(spec: &PromptSpec) -> String {
    let mut obj = Map::new();
    obj.insert("Persona".into(), Value::String(spec.persona.clone()));
    obj.insert("Task".into(), Value::String(spec.task.clone()));
    obj.insert(
        "Instructions".into(),
        Value::Array(spec.instructions.iter().cloned().map(Value::String).collect()),
    );
    obj.insert("Output format".into(), Value::String(spec.output_format.clone()));
    let examples = spec
        .examples
        .iter()
        .map(|e| match serde_json::from_str::<Value>(e) {
            Ok(v @ (Value::Object(_) | Value::Array(_))) => v,
            _ => Value::String(e.clone()),
        })
        .collect();
    obj.insert(spec.closing_key().into(), Value::Array(examples));

    let mut buf = Vec::new();
    let fmt = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    Value::Object(obj).serialize(&mut ser).expect("prompt serializes");
    String::from_utf8(buf).expect("utf-8 json")
}

fn render_markdown(spec: &PromptSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Persona\n{}\n", spec.persona);
    let _ = writeln!(s, "## Task\n{}\n", spec.task);
    s.push_str("## Instructions\n");
    for i in &spec.instructions {
        let _ = writeln!(s, "- {i}");
    }
    let _ = writeln!(s, "\n## Output format\n{}\n", spec.output_format);
    let _ = writeln!(s, "## {}", spec.closing_key());
    for e in &spec.examples {
        let _ = writeln!(s, "- {e}");
    }
    s
}

/// Built-in prompt presets by dataset and setting.
pub mod presets {
    use super::*;

    const PERSONA_AERIAL: &str =
        "You are an advanced AI model capable of understanding and analyzing aerial images.";
    const PERSONA_RS: &str =
        "You are an advanced AI model capable of understanding and analyzing remote sensing images.";
    const TASK_OV: &str = "Given an input satellite imagery, count the number of objects from specific categories. Provide the results in JSON format where the keys are the category names and the values are the corresponding counts.";
    const OUTPUT: &str = r#"{ "category1": count1, "category2": count2, ... }"#;
    const OUTPUT_SUB: &str = r#"{ "subcategory1": count1, "subcategory2": count2, ... }"#;
    const ANSWER: [&str; 2] = ["Ensure the category names are in singular form", "Provide the counts as integers."];

    pub const NWPU_CLASSES: [&str; 10] = [
        "airplane",
        "ship",
        "storage_tank",
        "baseball_field",
        "tennis_court",
        "basketball_court",
        "track_field",
        "harbor",
        "bridge",
        "vehicle",
    ];

    pub const DIOR_CLASSES: [&str; 20] = [
        "airplane",
        "airport",
        "baseball field",
        "basketball court",
        "bridge",
        "chimney",
        "expressway service area",
        "expressway toll station",
        "dam",
        "golf field",
        "ground track field",
        "harbor",
        "overpass",
        "ship",
        "stadium",
        "storage tank",
        "tennis court",
        "train station",
        "vehicle",
        "windmill",
    ];

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `The N categories in the dataset are: ['a', 'b', ...]`
    pub fn category_list_line(classes: &[impl AsRef<str>]) -> String {
        let quoted: Vec<String> = classes.iter().map(|c| format!("'{}'", c.as_ref())).collect();
        format!("The {} categories in the dataset are: [{}]", classes.len(), quoted.join(", "))
    }

    pub fn nwpu_open_vocabulary() -> PromptSpec {
        PromptSpec {
            setting: Setting::OpenVocabulary,
            persona: PERSONA_AERIAL.into(),
            task: TASK_OV.into(),
            instructions: vec![
                category_list_line(&NWPU_CLASSES),
                "The spatial resolution of the imagery in the dataset ranges from 0.08 m to 2 m.".into(),
                "Do not count ships or vehicles that are hard to annotate in the relatively low-resolution images as they are not annotated due to the small size.".into(),
                "Harbor is defined as a pier to dock ships. If multiple harbors are visible in the image, count each distinct pier separately.".into(),
            ],
            output_format: r#"{"category1": count1, "category2": count2, ... }"#.into(),
            examples: strings(&[
                r#"{ "airplane": 2, "ship": 0, "storage_tank": 3, "baseball_field": 1, "tennis_court": 0, "basketball_court": 0, "track_field": 0, "harbor": 6, "bridge": 0, "vehicle": 0 }"#,
                r#"{ "airplane": 5, "ship": 2, "storage_tank": 0, "baseball_field": 0, "tennis_court": 1, "basketball_court": 0, "track_field": 0, "harbor": 0, "bridge": 1, "vehicle": 10 }"#,
            ]),
            format: PromptFormat::Json,
        }
    }

    pub fn dior_open_vocabulary() -> PromptSpec {
        PromptSpec {
            setting: Setting::OpenVocabulary,
            persona: PERSONA_RS.into(),
            task: TASK_OV.into(),
            instructions: vec![
                category_list_line(&DIOR_CLASSES),
                "The spatial resolution of the images is 0.3m-30m.".into(),
                "Airport is a large area of land where aircraft can take off and land. It includes runways and other facilities. Do not count airport if the it is not compeletely visible in the image.".into(),
                "Harbor is defined as a pier to dock ships. If multiple harbors are visible in the image, count each distinct pier separately.".into(),
                "Expressway toll station is a toll booth at the entrance of the expressway and spans the road.".into(),
                "Expressway service area is a rest area along an expressway. If it exsits on the both sides of the expressway, count them separately.".into(),
                "Overpass is a road crossing over another road. Bridge is a road spanning a river. Distinguish them carefully.".into(),
                "If the overpass or bridge is composed of parallel, separate sections (for example, different lanes or directions of traffic), each section should be counted individually.".into(),
                "Count every ship and vehicle carefully, even the resolution is low and the objects are small and dense.".into(),
                "If none of the objects among the categories is visible, output a JSON object with all categories set to 0".into(),
            ],
            output_format: OUTPUT.into(),
            examples: strings(&[
                r#"{ "airplane": 2, "airport": 0, "baseball field": 0, "basketball court": 0, "bridge": 1, ... }"#,
                r#"{ "airplane": 0, "airport": 0, "baseball field": 2, "basketball court": 6, "bridge": 0, ... }"#,
            ]),
            format: PromptFormat::Json,
        }
    }

    pub fn nwpu_open_ended() -> PromptSpec {
        PromptSpec {
            setting: Setting::OpenEnded,
            persona: PERSONA_RS.into(),
            task: "Given an input satellite imagery, count the number of all the visible remote sensing objects. Provide the results in JSON format where the keys are the category names and the values are the corresponding counts.".into(),
            instructions: strings(&[
                "The spatial resolution of the imagery in the dataset ranges from 0.08 m to 2 m.",
                "Do not count ships or vehicles that are too samll and are hard to annotate in the relatively low-resolution images.",
                "Only count objects that are clearly visible in the imagery. If a category is not visible, do not include it in the output.",
            ]),
            output_format: OUTPUT.into(),
            examples: strings(&ANSWER),
            format: PromptFormat::Json,
        }
    }

    pub fn dior_open_ended() -> PromptSpec {
        PromptSpec {
            setting: Setting::OpenEnded,
            persona: PERSONA_RS.into(),
            task: "Given an input satellite imagery, count the number of all the visible remote sensing objects or scenes. Provide the results in JSON format where the keys are the category names and the values are the corresponding counts.".into(),
            instructions: strings(&[
                "The spatial resolution of the imagery in the dataset ranges from 0.3 m to 30 m.",
                "If the resolution is too limited or the scene is too dense to accurately count certain objects, exclude those objects from the results.",
                "Only count objects that are clearly visible in the imagery.",
            ]),
            output_format: OUTPUT.into(),
            examples: strings(&ANSWER),
            format: PromptFormat::Json,
        }
    }

    fn subclass(task: String, instructions: &[&str]) -> PromptSpec {
        PromptSpec {
            setting: Setting::OpenSubclass,
            persona: PERSONA_RS.into(),
            task,
            instructions: strings(instructions),
            output_format: OUTPUT_SUB.into(),
            examples: strings(&ANSWER),
            format: PromptFormat::Json,
        }
    }

    fn subclass_task(visible: bool, parent: &str) -> String {
        format!(
            "Given an input satellite imagery, count the number of {}objects that belong to the parent category **{parent}**. Provide the results in JSON format where the keys are the names of the subcategories and the values are the corresponding counts.",
            if visible { "visible " } else { "" }
        )
    }

    const EMPTY_SUB: &str = "If none of the objects belong to the parent category is visible, output a empty JSON object like { }";

    /// `parent` is `"sports field"` or `"means of transport"`; any other
    /// parent reuses the sports-field instructions.
    pub fn nwpu_open_subclass(parent: &str) -> PromptSpec {
        let task = subclass_task(false, parent);
        if parent == "means of transport" {
            subclass(
                task,
                &[
                    "The spatial resolution of the imagery in the dataset ranges from 0.08 m to 2 m.",
                    "Do not count boats or land vehicles that are hard to annotate in the relatively low-resolution images as they are not annotated due to the small size.",
                    EMPTY_SUB,
                ],
            )
        } else {
            subclass(
                task,
                &[
                    "The spatial resolution of the images is 0.08m-2m.",
                    "Do not count objects that are hard to annotate in the relatively low-resolution images as they are not annotated due to the small size.",
                    EMPTY_SUB,
                ],
            )
        }
    }

    pub fn dior_open_subclass(parent: &str) -> PromptSpec {
        subclass(
            subclass_task(true, parent),
            &[
                "The spatial resolution of the images is 0.3m-30m.",
                "Return only the categories and counts that meet the visibility and resolution criteria. If none of the objects belong to the parent category is visible, output a empty JSON object like { }",
            ],
        )
    }

    /// Open-vocabulary prompt for an arbitrary class list, sharing the generic
    /// persona and task.
    pub fn custom_open_vocabulary(classes: &[impl AsRef<str>]) -> PromptSpec {
        let names: Vec<&str> = classes.iter().map(|c| c.as_ref()).collect();
        let example: serde_json::Map<String, Value> =
            names.iter().map(|c| (c.to_string(), Value::from(0))).collect();
        PromptSpec {
            setting: Setting::OpenVocabulary,
            persona: PERSONA_RS.into(),
            task: TASK_OV.into(),
            instructions: vec![category_list_line(&names)],
            output_format: OUTPUT.into(),
            examples: vec![Value::Object(example).to_string()],
            format: PromptFormat::Json,
        }
    }

    /// Looks up a preset by dataset name (`nwpu` or `dior`), setting and, for
    /// the subclass setting, parent category.
    pub fn lookup(dataset: &str, setting: Setting, parent: Option<&str>) -> Option<PromptSpec> {
        let parent = parent.unwrap_or("sports field");
        match (dataset.to_ascii_lowercase().as_str(), setting) {
            ("nwpu", Setting::OpenVocabulary) => Some(nwpu_open_vocabulary()),
            ("dior", Setting::OpenVocabulary) => Some(dior_open_vocabulary()),
            ("nwpu", Setting::OpenEnded) => Some(nwpu_open_ended()),
            ("dior", Setting::OpenEnded) => Some(dior_open_ended()),
            ("nwpu", Setting::OpenSubclass) => Some(nwpu_open_subclass(parent)),
            ("dior", Setting::OpenSubclass) => Some(dior_open_subclass(parent)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_key_order() {
        let p = build_count_prompt(&presets::nwpu_open_vocabulary());
        let pos = |k: &str| p.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("Persona") < pos("Task"));
        assert!(pos("Task") < pos("Instructions"));
        assert!(pos("Instructions") < pos("Output format"));
        assert!(pos("Output format") < pos("Examples"));
        assert!(p.contains("count the number of objects from specific categories"));
        assert!(p.starts_with("{\n    \"Persona\""));
        let v: Value = serde_json::from_str(&p).unwrap();
        assert_eq!(v["Examples"][0]["harbor"], 6);
    }

    #[test]
    fn empty_instructions_still_valid() {
        let mut spec = presets::nwpu_open_ended();
        spec.instructions.clear();
        let v: Value = serde_json::from_str(&build_count_prompt(&spec)).unwrap();
        assert_eq!(v["Instructions"], Value::Array(vec![]));
        assert!(v.get("Answer").is_some());
    }

    #[test]
    fn subclass_mentions_parent() {
        let p = build_count_prompt(&presets::nwpu_open_subclass("sports field"));
        assert!(p.contains("belong to the parent category **sports field**"));
        let d = build_count_prompt(&presets::dior_open_subclass("means of transport"));
        assert!(d.contains("count the number of visible objects that belong to the parent category **means of transport**"));
    }

    #[test]
    fn dior_examples_stay_strings() {
        let v: Value = serde_json::from_str(&build_count_prompt(&presets::dior_open_vocabulary())).unwrap();
        assert!(v["Examples"][0].as_str().unwrap().ends_with("... }"));
        assert_eq!(v["Instructions"].as_array().unwrap().len(), 10);
    }

    #[test]
    fn markdown_has_all_sections() {
        let p = build_count_prompt(&presets::nwpu_open_vocabulary().with_format(PromptFormat::Markdown));
        for h in ["## Persona", "## Task", "## Instructions", "## Output format", "## Examples"] {
            assert!(p.contains(h), "{h}");
        }
        assert!(p.contains("- Harbor is defined as a pier to dock ships."));
    }

    #[test]
    fn parse_setting_names() {
        assert_eq!("open_ended".parse::<Setting>().unwrap(), Setting::OpenEnded);
        assert!("closed".parse::<Setting>().is_err());
        assert_eq!("md".parse::<PromptFormat>().unwrap(), PromptFormat::Markdown);
    }
}
