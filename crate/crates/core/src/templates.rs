//! Task prompt templates: registry, seeded sampling, instantiation and
//! endpoint-assisted expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock, RwLock};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::{EndpointError, TextGenerator};
use crate::jsonl::{self, JsonlError};
use crate::seed;

/// Instruction prompt shipped for endpoint expansion. Slots: `{purpose}`,
/// `{sample}`, `{count}`, `{placeholders}`.
pub const DEFAULT_EXPANSION_PROMPT: &str = include_str!("../assets/expansion_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Captioning,
    SpottingCaption,
    GroundingCaption,
    #[serde(rename = "REG")]
    Reg,
    #[serde(rename = "REC")]
    Rec,
    #[serde(rename = "VQA_QA")]
    VqaQa,
    #[serde(rename = "VQA_QCA")]
    VqaQca,
    #[serde(rename = "VQA_QCPointA")]
    VqaQcPointA,
    #[serde(rename = "VQA_QCBoxA")]
    VqaQcBoxA,
    PointQA,
    #[serde(rename = "PointQA_V7W")]
    PointQaV7w,
    #[serde(rename = "RD")]
    Rd,
    Chessboard,
}

impl TaskKind {
    pub const ALL: [TaskKind; 13] = [
        TaskKind::Captioning,
        TaskKind::SpottingCaption,
        TaskKind::GroundingCaption,
        TaskKind::Reg,
        TaskKind::Rec,
        TaskKind::VqaQa,
        TaskKind::VqaQca,
        TaskKind::VqaQcPointA,
        TaskKind::VqaQcBoxA,
        TaskKind::PointQA,
        TaskKind::PointQaV7w,
        TaskKind::Rd,
        TaskKind::Chessboard,
    ];

    /// The wire name, as used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Captioning => "Captioning",
            TaskKind::SpottingCaption => "SpottingCaption",
            TaskKind::GroundingCaption => "GroundingCaption",
            TaskKind::Reg => "REG",
            TaskKind::Rec => "REC",
            TaskKind::VqaQa => "VQA_QA",
            TaskKind::VqaQca => "VQA_QCA",
            TaskKind::VqaQcPointA => "VQA_QCPointA",
            TaskKind::VqaQcBoxA => "VQA_QCBoxA",
            TaskKind::PointQA => "PointQA",
            TaskKind::PointQaV7w => "PointQA_V7W",
            TaskKind::Rd => "RD",
            TaskKind::Chessboard => "Chessboard",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Placeholders every template of this task must contain.
    pub fn required_placeholders(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            TaskKind::Captioning | TaskKind::SpottingCaption => &[Image],
            TaskKind::GroundingCaption | TaskKind::Reg => &[Image, Objs],
            TaskKind::Rec | TaskKind::Chessboard => &[Image, Expr],
            TaskKind::VqaQa
            | TaskKind::VqaQca
            | TaskKind::VqaQcPointA
            | TaskKind::VqaQcBoxA
            | TaskKind::Rd => &[Image, Question],
            TaskKind::PointQA | TaskKind::PointQaV7w => &[Image, Objs, Question],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::from_name(s).ok_or_else(|| format!("unknown task kind '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Image,
    Expr,
    Objs,
    Question,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::Image,
        Placeholder::Expr,
        Placeholder::Objs,
        Placeholder::Question,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Image => "<image>",
            Placeholder::Expr => "<expr>",
            Placeholder::Objs => "<objs>",
            Placeholder::Question => "<question>",
        }
    }

    fn from_token(token: &str) -> Option<Placeholder> {
        Placeholder::ALL.into_iter().find(|p| p.token() == token)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

static KNOWN_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(?:image|expr|objs|question)>").unwrap());
static ANY_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[A-Za-z_][A-Za-z0-9_]*>").unwrap());

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("invalid template '{id}' for {task}: {}", problems.join("; "))]
    InvalidTemplate {
        task: TaskKind,
        id: String,
        problems: Vec<String>,
    },
    #[error("template set for {task} is invalid: {reason}")]
    InvalidSet { task: TaskKind, reason: String },
    #[error("no template set registered for {0}")]
    UnknownTask(TaskKind),
    #[error("no binding for placeholder {0}")]
    MissingBinding(Placeholder),
    #[error(transparent)]
    EndpointUnavailable(#[from] EndpointError),
    #[error("all {} endpoint candidates were rejected", .0.len())]
    AllCandidatesRejected(Vec<RejectedCandidate>),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// One prompt template, stored on disk as `{task, id, body}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub task: TaskKind,
    pub id: String,
    pub body: String,
}

impl Template {
    pub fn new(task: TaskKind, id: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let t = Template {
            task,
            id: id.into(),
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Placeholders present in the body, in order of appearance.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        KNOWN_TOKEN
            .find_iter(&self.body)
            .filter_map(|m| Placeholder::from_token(m.as_str()))
            .collect()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.id.trim().is_empty() {
            problems.push("empty id".to_string());
        }
        for m in ANY_TOKEN.find_iter(&self.body) {
            if Placeholder::from_token(m.as_str()).is_none() {
                problems.push(format!("unknown placeholder {}", m.as_str()));
            }
        }
        let present = self.placeholders();
        for required in self.task.required_placeholders() {
            if !present.contains(required) {
                problems.push(format!("missing required placeholder {required}"));
            }
        }
        let images = present.iter().filter(|p| **p == Placeholder::Image).count();
        if images > 1 {
            problems.push(format!("<image> appears {images} times"));
        }
        problems
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TemplateError::InvalidTemplate {
                task: self.task,
                id: self.id.clone(),
                problems,
            })
        }
    }
}

/// Placeholder values for [`instantiate`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<Placeholder, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bindings with `<image>` mapped to the literal visual-token marker.
    pub fn with_image() -> Self {
        Self::new().with(Placeholder::Image, Placeholder::Image.token())
    }

    pub fn with(mut self, p: Placeholder, value: impl Into<String>) -> Self {
        self.0.insert(p, value.into());
        self
    }

    pub fn get(&self, p: Placeholder) -> Option<&str> {
        self.0.get(&p).map(String::as_str)
    }
}

/// Substitutes every placeholder token in one left-to-right pass. Inserted
/// text is never rescanned.
pub fn instantiate(template: &Template, bindings: &Bindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len() + 64);
    let mut last = 0;
    for m in KNOWN_TOKEN.find_iter(&template.body) {
        let p = Placeholder::from_token(m.as_str()).expect("regex matches known tokens only");
        let value = bindings.get(p).ok_or(TemplateError::MissingBinding(p))?;
        out.push_str(&template.body[last..m.start()]);
        out.push_str(value);
        last = m.end();
    }
    out.push_str(&template.body[last..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    task: TaskKind,
    variants: Vec<Template>,
}

impl TemplateSet {
    pub fn new(task: TaskKind, variants: Vec<Template>) -> Result<Self, TemplateError> {
        let set = TemplateSet { task, variants };
        set.validate()?;
        Ok(set)
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn variants(&self) -> &[Template] {
        &self.variants
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    fn validate(&self) -> Result<(), TemplateError> {
        if self.variants.is_empty() {
            return Err(TemplateError::InvalidSet {
                task: self.task,
                reason: "no variants".into(),
            });
        }
        let mut ids = HashSet::new();
        for t in &self.variants {
            if t.task != self.task {
                return Err(TemplateError::InvalidSet {
                    task: self.task,
                    reason: format!("template '{}' belongs to {}", t.id, t.task),
                });
            }
            t.validate()?;
            if !ids.insert(t.id.as_str()) {
                return Err(TemplateError::InvalidSet {
                    task: self.task,
                    reason: format!("duplicate id '{}'", t.id),
                });
            }
        }
        Ok(())
    }

    /// Seeded uniform choice over the variants.
    pub fn sample(&self, seed: u64) -> &Template {
        let i = seed::rng(seed).gen_range(0..self.variants.len());
        &self.variants[i]
    }
}

/// Template sets keyed by task. Readers take a shared lock; registration
/// swaps in a whole set at once.
#[derive(Debug, Default)]
pub struct TemplateRegistry {
    sets: RwLock<HashMap<TaskKind, Arc<TemplateSet>>>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding [`starter_sets`].
    pub fn with_starter_sets() -> Self {
        let reg = Self::new();
        for set in starter_sets() {
            reg.register_set(set).expect("starter sets are valid");
        }
        reg
    }

    pub fn register_set(&self, set: TemplateSet) -> Result<(), TemplateError> {
        set.validate()?;
        self.sets
            .write()
            .expect("registry lock poisoned")
            .insert(set.task, Arc::new(set));
        Ok(())
    }

    pub fn get(&self, task: TaskKind) -> Result<Arc<TemplateSet>, TemplateError> {
        self.sets
            .read()
            .expect("registry lock poisoned")
            .get(&task)
            .cloned()
            .ok_or(TemplateError::UnknownTask(task))
    }

    pub fn tasks(&self) -> BTreeSet<TaskKind> {
        self.sets.read().expect("registry lock poisoned").keys().copied().collect()
    }

    pub fn sample_template(&self, task: TaskKind, seed: u64) -> Result<Template, TemplateError> {
        Ok(self.get(task)?.sample(seed).clone())
    }

    /// Loads `{task, id, body}` lines and registers one set per task,
    /// replacing any set already registered for it.
    pub fn load_file(&self, path: &Path) -> Result<Vec<TaskKind>, TemplateError> {
        let sets = read_sets(path)?;
        let tasks = sets.iter().map(|s| s.task).collect();
        for set in sets {
            self.register_set(set)?;
        }
        Ok(tasks)
    }
}

/// Groups template lines by task, preserving first-seen order.
pub fn read_sets(path: &Path) -> Result<Vec<TemplateSet>, TemplateError> {
    let templates: Vec<Template> = jsonl::read(path)?;
    let mut order = Vec::new();
    let mut grouped: HashMap<TaskKind, Vec<Template>> = HashMap::new();
    for t in templates {
        if !grouped.contains_key(&t.task) {
            order.push(t.task);
        }
        grouped.entry(t.task).or_default().push(t);
    }
    order
        .into_iter()
        .map(|task| TemplateSet::new(task, grouped.remove(&task).unwrap_or_default()))
        .collect()
}

pub fn write_sets(path: &Path, sets: &[TemplateSet]) -> Result<(), TemplateError> {
    let all: Vec<&Template> = sets.iter().flat_map(|s| s.variants.iter()).collect();
    jsonl::write(path, &all)?;
    Ok(())
}

const STARTER: &[(TaskKind, &[&str])] = &[
    (
        TaskKind::Captioning,
        &[
            "Describe this image <image> as simply as possible.",
            "What is the content of the image <image>? Please answer in short sentences.",
            "Summarize the content of the photo <image>.",
        ],
    ),
    (
        TaskKind::SpottingCaption,
        &[
            "Can you provide a description of the image <image> and include the coordinates [x0,y0,x1,y1] for each mentioned object?",
            "Please explain what's happening in the photo <image> and give coordinates [xmin,ymin,xmax,ymax] for the items you reference.",
            "How would you describe the contents of the image <image>? Please provide the positions of mentioned objects in square brackets.",
        ],
    ),
    (
        TaskKind::GroundingCaption,
        &[
            "Can you give me a description of the region <objs> in image <image>?",
            "Describe what's happening within the coordinates <objs> of the given image <image>.",
            "What does the area <objs> within the given visual <image> contain?",
        ],
    ),
    (
        TaskKind::Reg,
        &[
            "For the given image <image>, can you provide a unique description of the area <objs>?",
            "In the photo <image>, how would you describe the selected area <objs> uniquely?",
            "Can you provide a description for the region <objs> in the image <image> such that it sets it apart from others?",
        ],
    ),
    (
        TaskKind::VqaQa,
        &[
            "I want to know the answer to `<question>' Refer to the image <image> and give a clear response.",
            "Answer this question directly after referring to the image <image>: <question>",
            "Examine the image <image> and provide a brief answer for `<question>'",
        ],
    ),
    (
        TaskKind::VqaQca,
        &[
            "Having a look at image <image>, can you tell me the answer to my question '<question>' and the logic leading to it?",
            "Please answer the following question '<question>' based on the image <image>, and describe your thought process",
            "Upon analyzing the image <image>, please find the answer to my question '<question>' and provide a detailed explanation.",
        ],
    ),
    (
        TaskKind::VqaQcPointA,
        &[
            "Analyze the image <image> and answer `<question>' Include your reasoning process and mark center points of related objects as [cx, cy].",
            "Based on <image>, please respond to `<question>' Include your thought process and note involved objects using [cx, cy] for their center points.",
            "While observing image <image>, kindly answer `<question>' Elaborate on your reasoning process and tag any object center points involved [x,y].",
        ],
    ),
    (
        TaskKind::VqaQcBoxA,
        &[
            "<question> Please offer your reasoning process, and provide bounding boxes of mentioned objects within square brackets. Here is the picture <image>",
            "Please explain your reasoning and provide bounding boxes, denoted by square brackets, for the objects mentioned in the picture <image>. <question>",
            "Consider the image <image>, and then provide a well-reasoned answer to the question '<question>' Don't forget to mark relevant object locations using [x0,y0,x1,y1].",
        ],
    ),
    (
        TaskKind::Rec,
        &[
            "In the given <image>, could you find and tell me the coordinates of <expr>?",
            "I need the coordinates of <expr> in <image>, can you please assist me with that?",
            "Locate <expr> in <image> and provide its coordinates, please.",
        ],
    ),
    (
        TaskKind::PointQA,
        &["Referring to point <objs> in image <image>, give a direct answer to '<question>'"],
    ),
    (
        TaskKind::PointQaV7w,
        &["Looking at the image <image>, answer '<question>' by choosing one of these regions: <objs>"],
    ),
    (TaskKind::Rd, &["<image> <question>"]),
    (
        TaskKind::Chessboard,
        &["<image> Which part is <expr> in if the picture is divided equally into four 2 by 2 parts? Choose from: (A) Top-left (B) Top-right (C) Bottom-left (D) Bottom-right."],
    ),
];

/// One template set per task, ready before any expansion runs.
pub fn starter_sets() -> Vec<TemplateSet> {
    STARTER
        .iter()
        .map(|(task, bodies)| {
            let variants = bodies
                .iter()
                .enumerate()
                .map(|(i, body)| Template {
                    task: *task,
                    id: format!("{}-{:03}", task.name().to_ascii_lowercase(), i),
                    body: (*body).to_string(),
                })
                .collect();
            TemplateSet::new(*task, variants).expect("starter templates are valid")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedCandidate {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpansionReport {
    pub task: TaskKind,
    pub requested: usize,
    pub returned: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedCandidate>,
}

fn render_prompt(prompt: &str, seed_template: &Template, purpose: &str, count: usize) -> String {
    let placeholders: Vec<&str> = seed_template.placeholders().iter().map(|p| p.token()).collect();
    prompt
        .replace("{purpose}", purpose)
        .replace("{sample}", &seed_template.body)
        .replace("{count}", &count.to_string())
        .replace("{placeholders}", &placeholders.join(", "))
}

fn clean_candidate(line: &str) -> &str {
    line.trim().trim_matches('"').trim()
}

/// Asks `client` to rewrite `seed_template` and keeps the rewrites that pass
/// template validation and are not duplicates. Nothing is generated locally;
/// the returned set holds endpoint output only.
pub fn expand_via_endpoint(
    seed_template: &Template,
    purpose: &str,
    count: usize,
    client: &dyn TextGenerator,
    prompt: &str,
) -> Result<(TemplateSet, ExpansionReport), TemplateError> {
    seed_template.validate()?;
    let task = seed_template.task;
    let request = render_prompt(prompt, seed_template, purpose, count.max(1));
    let texts = client.generate(&request)?;

    let candidates: Vec<&str> = texts
        .iter()
        .flat_map(|t| t.lines())
        .map(clean_candidate)
        .filter(|l| !l.is_empty())
        .collect();

    let mut seen: HashSet<&str> = HashSet::from([seed_template.body.as_str()]);
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for text in &candidates {
        if accepted.len() == count {
            rejected.push(RejectedCandidate {
                text: text.to_string(),
                reason: "beyond requested count".into(),
            });
            continue;
        }
        if !seen.insert(text) {
            rejected.push(RejectedCandidate {
                text: text.to_string(),
                reason: "duplicate".into(),
            });
            continue;
        }
        let t = Template {
            task,
            id: format!("{}-x{:04}", task.name().to_ascii_lowercase(), accepted.len()),
            body: text.to_string(),
        };
        match t.problems() {
            p if p.is_empty() => accepted.push(t),
            p => rejected.push(RejectedCandidate {
                text: text.to_string(),
                reason: p.join("; "),
            }),
        }
    }
    for r in &rejected {
        log::warn!("rejected template candidate for {task}: {} ({})", r.text, r.reason);
    }
    if accepted.is_empty() {
        return Err(TemplateError::AllCandidatesRejected(rejected));
    }
    let report = ExpansionReport {
        task,
        requested: count,
        returned: candidates.len(),
        accepted: accepted.len(),
        rejected,
    };
    Ok((TemplateSet::new(task, accepted)?, report))
}
