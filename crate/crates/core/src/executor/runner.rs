use std::sync::Arc;
use std::time::Duration;

use crate::clock::MonotonicClock;
use crate::model::{Outcome, TaskResult, TaskSpec};
use crate::tasks::{ImplementationCatalog, TaskImplementation};

use super::bundle::{PipelineBundle, PipelineReport, StageTrace, EXECUTOR_VERSION};
use super::context::TaskContext;

/// Runs every stage of `bundle` in order and returns the complete report.
/// Task anomalies never escape: each one becomes a [`TaskResult`].
pub async fn run_pipeline(
    bundle: &PipelineBundle,
    ctx: Arc<TaskContext>,
    catalog: &ImplementationCatalog,
) -> PipelineReport {
    let clock = MonotonicClock::new();
    let started_at = clock.now();
    let mut results = Vec::with_capacity(bundle.pipeline.task_count());
    let mut traces = Vec::with_capacity(bundle.pipeline.stages.len());
    let mut stopped = false;

    for (stage_idx, stage) in bundle.pipeline.stages.iter().enumerate() {
        if stopped {
            results.extend(stage.tasks.iter().map(|t| TaskResult::skipped(&t.name, &bundle.node_id, stage_idx)));
            continue;
        }
        let dispatched_at = clock.now();
        let stage_results = run_stage(bundle, stage_idx, &stage.tasks, &ctx, catalog, clock).await;
        let completed_at = clock.now();
        traces.push(StageTrace { stage: stage_idx, dispatched_at, completed_at });
        if bundle.early_stop && stage_results.iter().any(|r| matches!(r.outcome, Outcome::Failure | Outcome::Timeout)) {
            stopped = true;
        }
        results.extend(stage_results);
    }

    PipelineReport {
        experiment_id: bundle.experiment_id.clone(),
        node_id: bundle.node_id.clone(),
        bundle_digest: bundle.digest.clone(),
        results,
        stages: traces,
        started_at,
        finished_at: clock.now(),
        executor_version: EXECUTOR_VERSION.to_string(),
    }
}

/// Starts every task of the stage before awaiting any of them; the stage
/// ends when the last task ends. Results come back in declaration order.
pub async fn run_stage(
    bundle: &PipelineBundle,
    stage_idx: usize,
    tasks: &[TaskSpec],
    ctx: &Arc<TaskContext>,
    catalog: &ImplementationCatalog,
    clock: MonotonicClock,
) -> Vec<TaskResult> {
    // The set aborts every task still running if the stage is dropped.
    let mut set = tokio::task::JoinSet::new();
    for (index, task) in tasks.iter().enumerate() {
        let imp = bundle.implementations.get(&task.name).and_then(|id| catalog.get(id).cloned());
        let missing = match (&imp, bundle.implementations.get(&task.name)) {
            (Some(_), _) => None,
            (None, Some(id)) => Some(format!("implementation `{id}` is not registered in this executor")),
            (None, None) => Some(format!("no implementation resolved for task `{}`", task.name)),
        };
        let task = task.clone();
        let ctx = Arc::clone(ctx);
        set.spawn(async move {
            if let Some(obs) = &ctx.observer {
                obs.task_started(&ctx.experiment_id, stage_idx, index, &task.name);
            }
            (index, run_task(&task, imp.as_deref(), missing, stage_idx, &ctx, clock).await)
        });
    }

    let mut slots: Vec<Option<TaskResult>> = vec![None; tasks.len()];
    while let Some(joined) = set.join_next().await {
        match joined {
            Ok((index, r)) => slots[index] = Some(r),
            Err(e) => tracing::error!(error = %e, "task join failed"),
        }
    }
    slots
        .into_iter()
        .zip(tasks)
        .map(|(slot, task)| {
            slot.unwrap_or_else(|| {
                let now = clock.now();
                TaskResult {
                    task_name: task.name.clone(),
                    node_id: bundle.node_id.clone(),
                    stage: stage_idx,
                    outcome: Outcome::Failure,
                    started_at: Some(now),
                    finished_at: Some(now),
                    payload: None,
                    error_text: Some("task aborted".into()),
                }
            })
        })
        .collect()
}

async fn run_task(
    task: &TaskSpec,
    imp: Option<&dyn TaskImplementation>,
    missing: Option<String>,
    stage: usize,
    ctx: &TaskContext,
    clock: MonotonicClock,
) -> TaskResult {
    let started = clock.now();
    let mut result = TaskResult {
        task_name: task.name.clone(),
        node_id: ctx.node_id.clone(),
        stage,
        outcome: Outcome::Success,
        started_at: Some(started),
        finished_at: None,
        payload: None,
        error_text: None,
    };
    let Some(imp) = imp else {
        result.outcome = Outcome::Failure;
        result.error_text = missing;
        result.finished_at = Some(clock.now());
        return result;
    };

    let limit = Duration::from_secs_f64(task.timeout_s.max(0.0));
    match tokio::time::timeout(limit, imp.run(&task.params, ctx)).await {
        Ok(Ok(out)) => result.payload = out.payload,
        Ok(Err(f)) => {
            result.outcome = Outcome::Failure;
            result.payload = f.payload;
            result.error_text = Some(f.message);
        }
        Err(_) => {
            result.outcome = Outcome::Timeout;
            result.error_text = Some(format!("timed out after {} s", task.timeout_s));
        }
    }
    result.finished_at = Some(clock.now());
    result
}
