use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{ModelError, TaskSpec};
use crate::canonical;

/// Tasks executed concurrently; the next stage starts after all of them end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tasks: Vec<TaskSpec>,
}

/// Ordered stages run on a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub pipeline_id: String,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub early_stop: bool,
}

/// The part of a pipeline that defines what runs. The id is a label and does
/// not contribute to identity.
#[derive(Serialize)]
struct PipelineContent<'a> {
    stages: &'a [Stage],
    early_stop: bool,
}

impl Pipeline {
    pub fn new(pipeline_id: impl Into<String>) -> Self {
        Self { pipeline_id: pipeline_id.into(), stages: Vec::new(), early_stop: false }
    }

    pub fn with_early_stop(mut self, early_stop: bool) -> Self {
        self.early_stop = early_stop;
        self
    }

    /// Returns a copy of this pipeline with one more stage holding `tasks`.
    ///
    /// Unnamed tasks are named after their type; a second unnamed task of the
    /// same type becomes `type-2`, then `type-3`, and so on.
    pub fn then(&self, tasks: impl IntoIterator<Item = TaskSpec>) -> Result<Pipeline, ModelError> {
        let mut tasks: Vec<TaskSpec> = tasks.into_iter().collect();
        if tasks.is_empty() {
            return Err(ModelError::EmptyStage { stage: self.stages.len() });
        }
        let mut used: HashSet<String> = self.task_names().map(str::to_string).collect();
        // Explicit names claim their slot first so auto-naming cannot steal them.
        for t in tasks.iter().filter(|t| !t.name.is_empty()) {
            if !used.insert(t.name.clone()) {
                return Err(ModelError::DuplicateTaskName(t.name.clone()));
            }
        }
        for t in tasks.iter_mut().filter(|t| t.name.is_empty()) {
            let mut candidate = t.task_type.clone();
            let mut ordinal = 2;
            while used.contains(&candidate) {
                candidate = format!("{}-{}", t.task_type, ordinal);
                ordinal += 1;
            }
            used.insert(candidate.clone());
            t.name = candidate;
        }
        let mut next = self.clone();
        next.stages.push(Stage { tasks });
        Ok(next)
    }

    pub fn task_names(&self) -> impl Iterator<Item = &str> {
        self.tasks().map(|t| t.name.as_str())
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.stages.iter().flat_map(|s| s.tasks.iter())
    }

    pub fn task_count(&self) -> usize {
        self.stages.iter().map(|s| s.tasks.len()).sum()
    }

    pub fn canonical_text(&self) -> String {
        canonical::to_canonical_string(self)
    }

    /// Content digest over stages and the early-stop flag.
    pub fn digest(&self) -> String {
        canonical::digest_of(&PipelineContent { stages: &self.stages, early_stop: self.early_stop })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn then_appends_without_mutating_input() {
        let empty = Pipeline::new("p");
        let one = empty.then([TaskSpec::sleep(5.0)]).unwrap();
        assert!(empty.stages.is_empty());
        assert_eq!(one.stages.len(), 1);
        assert_eq!(one.stages[0].tasks.len(), 1);
        assert_eq!(one.stages[0].tasks[0].name, "sleep");
    }

    #[test]
    fn stages_follow_call_order() {
        let p = Pipeline::new("p3")
            .then([TaskSpec::wait_flag("ready", 60.0).named("wait_for_readiness_flag")])
            .unwrap()
            .then([TaskSpec::shell("curl server").named("benign_traffic")])
            .unwrap();
        let names: Vec<_> = p.task_names().collect();
        assert_eq!(names, ["wait_for_readiness_flag", "benign_traffic"]);
    }

    #[test]
    fn hundred_stages_digest_stable() {
        let build = || {
            let mut p = Pipeline::new("long");
            for _ in 0..100 {
                p = p.then([TaskSpec::sleep(0.0)]).unwrap();
            }
            p
        };
        let (a, b) = (build(), build());
        assert_eq!(a.stages.len(), 100);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.canonical_text(), b.canonical_text());
        assert_eq!(a.stages[99].tasks[0].name, "sleep-100");
    }

    #[test]
    fn errors() {
        let p = Pipeline::new("p").then([TaskSpec::sleep(1.0).named("x")]).unwrap();
        assert_eq!(p.then(Vec::new()), Err(ModelError::EmptyStage { stage: 1 }));
        assert_eq!(
            p.then([TaskSpec::shell("true").named("x")]),
            Err(ModelError::DuplicateTaskName("x".into()))
        );
    }

    #[test]
    fn auto_names_avoid_explicit_ones() {
        let p = Pipeline::new("p")
            .then([TaskSpec::sleep(1.0), TaskSpec::sleep(1.0).named("sleep-2"), TaskSpec::sleep(1.0)])
            .unwrap();
        let names: Vec<_> = p.task_names().collect();
        assert_eq!(names, ["sleep", "sleep-2", "sleep-3"]);
    }

    #[test]
    fn digest_ignores_id_but_not_content() {
        let a = Pipeline::new("a").then([TaskSpec::sleep(1.0)]).unwrap();
        let b = Pipeline::new("b").then([TaskSpec::sleep(1.0)]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.clone().with_early_stop(true).digest());
        let crlf = Pipeline::new("a").then([TaskSpec::shell("a\r\nb")]).unwrap();
        let lf = Pipeline::new("a").then([TaskSpec::shell("a\nb")]).unwrap();
        assert_eq!(crlf.digest(), lf.digest());
    }
}
