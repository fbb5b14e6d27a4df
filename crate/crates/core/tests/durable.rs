//! Integration tests for the durable-execution kernel: idempotent starts,
//! step replay and retry, event versioning, queue ceilings, FIFO claims,
//! and crash-shaped recovery driven through public APIs.

use std::path::PathBuf;
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU32, Ordering};
use std::time::Duration;

use futures::FutureExt;
use objmirror_core::{
    NewWorkflow, QueueConfig, RetryPolicy, Runtime, RuntimeConfig, SqliteStore, StepFailure,
    StepStatus, WorkflowStatus, now_ms,
};
use parking_lot::Mutex;
use serde_json::{Value, json};

fn temp_db() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("state.db");
    (dir, path)
}

fn runtime(path: &PathBuf, executor: &str) -> Runtime {
    let mut config = RuntimeConfig::new(path);
    config.executor_id = Some(executor.to_string());
    Runtime::open(config).expect("open runtime")
}

/// Registers a trivial workflow that records how many times it ran.
fn register_counting(rt: &Runtime, name: &str, counter: Arc<AtomicU32>) {
    rt.register_workflow(name, move |_ctx, input| {
        let counter = counter.clone();
        async move {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(input)
        }
        .boxed()
    });
}

#[tokio::test(flavor = "multi_thread")]
async fn resubmitting_same_workflow_id_is_idempotent() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let runs = Arc::new(AtomicU32::new(0));
    register_counting(&rt, "echo", runs.clone());

    let input = json!({"payload": [1, 2, 3]});
    let first = rt
        .start_workflow("echo", input.clone(), Some("wf-1".into()))
        .await
        .unwrap();
    let second = rt
        .start_workflow("echo", input.clone(), Some("wf-1".into()))
        .await
        .unwrap();
    assert_eq!(first.workflow_id, second.workflow_id);

    let rec = rt.wait_for_workflow("wf-1", 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);
    assert_eq!(rec.output(), Some(&input));
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(runs.load(Ordering::SeqCst), 1, "body must run exactly once");
}

#[tokio::test(flavor = "multi_thread")]
async fn conflicting_resubmission_is_rejected() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    register_counting(&rt, "echo", Arc::new(AtomicU32::new(0)));

    rt.start_workflow("echo", json!({"v": 1}), Some("wf-1".into()))
        .await
        .unwrap();
    let err = rt
        .start_workflow("echo", json!({"v": 2}), Some("wf-1".into()))
        .await
        .unwrap_err();
    assert!(err.to_string().contains("different input"), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_workflow_name_is_rejected() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let err = rt
        .start_workflow("nonexistent", json!(null), None)
        .await
        .unwrap_err();
    assert!(err.to_string().contains("nonexistent"), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn workflow_record_is_visible_before_body_runs() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let gate = Arc::new(tokio::sync::Notify::new());
    {
        let gate = gate.clone();
        rt.register_workflow("gated", move |_ctx, _input| {
            let gate = gate.clone();
            async move {
                gate.notified().await;
                Ok(json!("done"))
            }
            .boxed()
        });
    }
    let handle = rt.start_workflow("gated", json!({}), None).await.unwrap();
    let rec = rt.get_workflow(&handle.workflow_id).await.unwrap().unwrap();
    assert_eq!(rec.status, WorkflowStatus::Pending);
    gate.notify_waiters();
    let rec = rt.wait_for_workflow(&handle.workflow_id, 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);
}

#[tokio::test(flavor = "multi_thread")]
async fn retryable_failures_back_off_and_succeed() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    rt.register_step(
        "flaky",
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 60,
            backoff_factor: 2.0,
            max_delay_ms: 10_000,
        },
    );
    let bodies = Arc::new(AtomicU32::new(0));
    {
        let bodies = bodies.clone();
        rt.register_workflow("job", move |ctx, _input| {
            let bodies = bodies.clone();
            async move {
                ctx.run_step("flaky", move || {
                    let bodies = bodies.clone();
                    async move {
                        let n = bodies.fetch_add(1, Ordering::SeqCst) + 1;
                        if n <= 2 {
                            Err(StepFailure::Retryable(format!("transient {n}")))
                        } else {
                            Ok(json!({"n": n}))
                        }
                    }
                    .boxed()
                })
                .await
                .map_err(|e| e.to_string())?;
                Ok(json!("ok"))
            }
            .boxed()
        });
    }
    let handle = rt.start_workflow("job", json!({}), None).await.unwrap();
    let rec = rt.wait_for_workflow(&handle.workflow_id, 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);
    assert_eq!(bodies.load(Ordering::SeqCst), 3);

    let step = rt
        .store()
        .get_step(&handle.workflow_id, 0)
        .unwrap()
        .unwrap();
    assert_eq!(step.status, StepStatus::Success);
    assert_eq!(step.attempts, 3);
    assert_eq!(step.attempt_started_at_ms.len(), 3);
    let gap1 = (step.attempt_started_at_ms[1] - step.attempt_started_at_ms[0]) as f64;
    let gap2 = (step.attempt_started_at_ms[2] - step.attempt_started_at_ms[1]) as f64;
    assert!(gap1 >= 55.0, "first backoff too short: {gap1}ms");
    assert!(gap2 >= gap1, "delays must be non-decreasing");
    let ratio = gap2 / gap1;
    assert!(
        (1.4..=2.6).contains(&ratio),
        "backoff ratio {ratio} should be near the factor 2.0"
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn permanent_failure_records_error_after_one_attempt() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let bodies = Arc::new(AtomicU32::new(0));
    {
        let bodies = bodies.clone();
        rt.register_workflow("job", move |ctx, _input| {
            let bodies = bodies.clone();
            async move {
                ctx.run_step("denied", move || {
                    let bodies = bodies.clone();
                    async move {
                        bodies.fetch_add(1, Ordering::SeqCst);
                        Err(StepFailure::Permanent("permission denied".into()))
                    }
                    .boxed()
                })
                .await?;
                Ok(json!("unreachable"))
            }
            .boxed()
        });
    }
    let handle = rt.start_workflow("job", json!({}), None).await.unwrap();
    let rec = rt.wait_for_workflow(&handle.workflow_id, 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Error);
    assert_eq!(rec.error_message().unwrap(), "permission denied");
    assert_eq!(bodies.load(Ordering::SeqCst), 1, "no retries on permanent");

    let step = rt
        .store()
        .get_step(&handle.workflow_id, 0)
        .unwrap()
        .unwrap();
    assert_eq!(step.status, StepStatus::Error);
    assert_eq!(step.attempts, 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn successful_steps_replay_without_reexecution_after_adoption() {
    let (_dir, path) = temp_db();
    let a_runs = Arc::new(AtomicU32::new(0));
    let b_runs = Arc::new(AtomicU32::new(0));
    let allow_b = Arc::new(AtomicBool::new(false));

    let register = |rt: &Runtime| {
        let a_runs = a_runs.clone();
        let b_runs = b_runs.clone();
        let allow_b = allow_b.clone();
        rt.register_workflow("pipeline", move |ctx, _input| {
            let a_runs = a_runs.clone();
            let b_runs = b_runs.clone();
            let allow_b = allow_b.clone();
            async move {
                let a = ctx
                    .run_step("step_a", move || {
                        let a_runs = a_runs.clone();
                        async move {
                            a_runs.fetch_add(1, Ordering::SeqCst);
                            Ok(json!(7))
                        }
                        .boxed()
                    })
                    .await?;
                let b = ctx
                    .run_step("step_b", move || {
                        let b_runs = b_runs.clone();
                        let allow_b = allow_b.clone();
                        async move {
                            b_runs.fetch_add(1, Ordering::SeqCst);
                            if allow_b.load(Ordering::SeqCst) {
                                Ok(json!(9))
                            } else {
                                // Simulates a crash mid-step: this life never
                                // finishes the attempt.
                                std::future::pending::<()>().await;
                                unreachable!()
                            }
                        }
                        .boxed()
                    })
                    .await?;
                Ok(json!({ "a": a, "b": b }))
            }
            .boxed()
        });
    };

    // Life A: no heartbeat loop (start() not called), so the workflow's
    // liveness freezes at creation and it goes stale while step_b hangs.
    let mut config_a = RuntimeConfig::new(&path);
    config_a.executor_id = Some("exec-a".into());
    config_a.staleness_ms = 400;
    let rt_a = Runtime::open(config_a).unwrap();
    register(&rt_a);
    let handle = rt_a
        .start_workflow("pipeline", json!({}), Some("wf-adopt".into()))
        .await
        .unwrap();

    tokio::time::sleep(Duration::from_millis(700)).await;
    assert_eq!(a_runs.load(Ordering::SeqCst), 1);
    assert_eq!(b_runs.load(Ordering::SeqCst), 1);

    // Life B adopts and finishes the pipeline.
    allow_b.store(true, Ordering::SeqCst);
    let mut config_b = RuntimeConfig::new(&path);
    config_b.executor_id = Some("exec-b".into());
    config_b.staleness_ms = 400;
    let rt_b = Runtime::open(config_b).unwrap();
    register(&rt_b);
    let report = rt_b.recover_pending().await.unwrap();
    assert_eq!(report.adopted, vec![handle.workflow_id.clone()]);
    assert!(report.unrecoverable.is_empty());

    let rec = rt_b.wait_for_workflow(&handle.workflow_id, 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);
    assert_eq!(rec.output(), Some(&json!({"a": 7, "b": 9})));
    assert_eq!(
        a_runs.load(Ordering::SeqCst),
        1,
        "recorded success must replay, not re-execute"
    );
    assert_eq!(
        b_runs.load(Ordering::SeqCst),
        2,
        "mid-flight step re-executes in the new life"
    );

    let step_b = rt_b.store().get_step(&handle.workflow_id, 1).unwrap().unwrap();
    assert_eq!(step_b.status, StepStatus::Success);
    assert_eq!(step_b.attempts, 1, "adoption resets the attempt budget");
}

#[tokio::test(flavor = "multi_thread")]
async fn events_version_monotonically_and_outlive_completion() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    rt.register_workflow("writer", move |ctx, _input| {
        async move {
            let v1 = ctx.set_event("tasks", json!({"phase": 1})).await.unwrap();
            let v2 = ctx.set_event("tasks", json!({"phase": 2})).await.unwrap();
            assert_eq!((v1, v2), (1, 2));
            Ok(json!(null))
        }
        .boxed()
    });
    let handle = rt.start_workflow("writer", json!({}), None).await.unwrap();
    let rec = rt.wait_for_workflow(&handle.workflow_id, 10).await.unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);

    let event = rt
        .get_event(&handle.workflow_id, "tasks")
        .await
        .unwrap()
        .unwrap();
    assert_eq!(event.version, 2);
    assert_eq!(event.value, json!({"phase": 2}));

    // Still writable and readable after the workflow is long over.
    let v3 = rt
        .set_event(&handle.workflow_id, "tasks", json!({"phase": "final"}))
        .await
        .unwrap();
    assert_eq!(v3, 3);
    assert!(rt.get_event(&handle.workflow_id, "missing").await.unwrap().is_none());

    let err = rt
        .set_event("no-such-wf", "tasks", json!(1))
        .await
        .unwrap_err();
    assert!(err.to_string().contains("no-such-wf"), "{err}");
}

#[test]
fn events_survive_reopen() {
    let (_dir, path) = temp_db();
    {
        let store = SqliteStore::open(&path).unwrap();
        store
            .insert_workflow(
                &NewWorkflow {
                    workflow_id: "wf-1",
                    name: "job",
                    input: &json!({}),
                    queue_name: None,
                    parent_id: None,
                    child_seq: None,
                    executor_id: None,
                },
                now_ms(),
            )
            .unwrap();
        store
            .set_event("wf-1", "tasks", &json!({"files": 3}), now_ms())
            .unwrap();
    }
    let store = SqliteStore::open(&path).unwrap();
    let event = store.get_event("wf-1", "tasks").unwrap().unwrap();
    assert_eq!(event.value, json!({"files": 3}));
    assert_eq!(event.version, 1);
}

#[test]
fn concurrent_event_reads_never_tear() {
    let (_dir, path) = temp_db();
    let writer_store = Arc::new(SqliteStore::open(&path).unwrap());
    writer_store
        .insert_workflow(
            &NewWorkflow {
                workflow_id: "wf-1",
                name: "job",
                input: &json!({}),
                queue_name: None,
                parent_id: None,
                child_seq: None,
                executor_id: None,
            },
            now_ms(),
        )
        .unwrap();
    let reader_store = Arc::new(SqliteStore::open(&path).unwrap());

    let writer = std::thread::spawn(move || {
        for i in 0..200 {
            let blob = "x".repeat(256);
            writer_store
                .set_event("wf-1", "tasks", &json!({"n": i, "blob": blob}), now_ms())
                .unwrap();
        }
    });
    let reader = std::thread::spawn(move || {
        let mut last_version = 0;
        for _ in 0..200 {
            if let Some(event) = reader_store.get_event("wf-1", "tasks").unwrap() {
                assert!(event.version >= last_version, "versions went backward");
                last_version = event.version;
                assert!(event.value.get("blob").is_some(), "torn event payload");
            }
        }
        last_version
    });
    writer.join().unwrap();
    let final_seen = reader.join().unwrap();
    assert!(final_seen <= 200);
}

/// Registers a child workflow that records (input index, completion order).
fn register_recording_child(
    rt: &Runtime,
    completions: Arc<Mutex<Vec<i64>>>,
    running: Arc<AtomicI64>,
    peak: Arc<AtomicI64>,
    hold: Duration,
) {
    rt.register_workflow("mirror_one", move |_ctx, input| {
        let completions = completions.clone();
        let running = running.clone();
        let peak = peak.clone();
        async move {
            let now = running.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(hold).await;
            running.fetch_sub(1, Ordering::SeqCst);
            completions.lock().push(input["idx"].as_i64().unwrap());
            Ok(input)
        }
        .boxed()
    });
}

fn register_fanout_parent(rt: &Runtime, queue: &str, count: i64) {
    let queue = queue.to_string();
    rt.register_workflow("fanout", move |ctx, _input| {
        let queue = queue.clone();
        async move {
            for idx in 0..count {
                ctx.enqueue(&queue, "mirror_one", json!({ "idx": idx }))
                    .await
                    .map_err(|e| e.to_string())?;
            }
            Ok(json!({ "enqueued": count }))
        }
        .boxed()
    });
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queued_children_complete_in_fifo_order() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let completions = Arc::new(Mutex::new(Vec::new()));
    register_recording_child(
        &rt,
        completions.clone(),
        Arc::new(AtomicI64::new(0)),
        Arc::new(AtomicI64::new(0)),
        Duration::from_millis(5),
    );
    register_fanout_parent(&rt, "q", 8);
    rt.create_queue(
        QueueConfig::new("q")
            .with_concurrency(Some(1), Some(1))
            .with_poll_interval_ms(10),
    )
    .unwrap();
    rt.start().await.unwrap();

    let parent = rt.start_workflow("fanout", json!({}), None).await.unwrap();
    rt.wait_for_workflow(&parent.workflow_id, 10).await.unwrap();

    let deadline = std::time::Instant::now() + Duration::from_secs(20);
    while completions.lock().len() < 8 {
        assert!(std::time::Instant::now() < deadline, "children stalled");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(*completions.lock(), (0..8).collect::<Vec<_>>());

    let children = rt.list_children(&parent.workflow_id).await.unwrap();
    assert_eq!(children.len(), 8);
    assert!(children
        .iter()
        .all(|c| c.workflow.status == WorkflowStatus::Success));
    assert!(rt
        .store()
        .list_queue_entries("q")
        .unwrap()
        .is_empty(), "finished entries must leave the queue");
    rt.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queue_concurrency_ceiling_holds() {
    let (_dir, path) = temp_db();
    let rt = runtime(&path, "exec-a");
    let completions = Arc::new(Mutex::new(Vec::new()));
    let running = Arc::new(AtomicI64::new(0));
    let peak = Arc::new(AtomicI64::new(0));
    register_recording_child(
        &rt,
        completions.clone(),
        running,
        peak.clone(),
        Duration::from_millis(80),
    );
    register_fanout_parent(&rt, "q", 10);
    rt.create_queue(
        QueueConfig::new("q")
            .with_concurrency(Some(3), Some(3))
            .with_poll_interval_ms(10),
    )
    .unwrap();
    rt.start().await.unwrap();

    let parent = rt.start_workflow("fanout", json!({}), None).await.unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(20);
    while completions.lock().len() < 10 {
        assert!(std::time::Instant::now() < deadline, "children stalled");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(
        peak.load(Ordering::SeqCst) <= 3,
        "ceiling breached: {}",
        peak.load(Ordering::SeqCst)
    );
    assert!(
        peak.load(Ordering::SeqCst) >= 2,
        "expected some parallelism under the ceiling"
    );
    rt.wait_for_workflow(&parent.workflow_id, 10).await.unwrap();
    rt.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn per_worker_ceiling_holds_across_two_runtimes() {
    let (_dir, path) = temp_db();
    let rt_a = runtime(&path, "exec-a");
    let rt_b = runtime(&path, "exec-b");
    let completions = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicI64::new(0));
    for rt in [&rt_a, &rt_b] {
        register_recording_child(
            rt,
            completions.clone(),
            Arc::new(AtomicI64::new(0)),
            peak.clone(),
            Duration::from_millis(60),
        );
        register_fanout_parent(rt, "q", 12);
        rt.create_queue(
            QueueConfig::new("q")
                .with_concurrency(Some(4), Some(2))
                .with_poll_interval_ms(10),
        )
        .unwrap();
    }
    rt_a.start().await.unwrap();
    rt_b.start().await.unwrap();

    // Sampler watches claims through its own connection.
    let sampler_store = Arc::new(SqliteStore::open(&path).unwrap());
    let stop = Arc::new(AtomicBool::new(false));
    let sampler = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            let mut max_total = 0usize;
            let mut max_per_worker = 0usize;
            let mut workers_seen = std::collections::BTreeSet::new();
            while !stop.load(Ordering::SeqCst) {
                let entries = sampler_store.list_queue_entries("q").unwrap();
                let claimed: Vec<_> = entries
                    .iter()
                    .filter_map(|e| e.claimed_by.as_deref())
                    .collect();
                max_total = max_total.max(claimed.len());
                let mut counts = std::collections::BTreeMap::new();
                for worker in claimed {
                    *counts.entry(worker.to_string()).or_insert(0usize) += 1;
                    workers_seen.insert(worker.to_string());
                }
                if let Some(&m) = counts.values().max() {
                    max_per_worker = max_per_worker.max(m);
                }
                std::thread::sleep(Duration::from_millis(4));
            }
            (max_total, max_per_worker, workers_seen)
        })
    };

    let parent = rt_a.start_workflow("fanout", json!({}), None).await.unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(30);
    while completions.lock().len() < 12 {
        assert!(std::time::Instant::now() < deadline, "children stalled");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    rt_a.wait_for_workflow(&parent.workflow_id, 10).await.unwrap();
    stop.store(true, Ordering::SeqCst);
    let (max_total, max_per_worker, workers_seen) = sampler.join().unwrap();

    assert!(max_total <= 4, "global ceiling breached: {max_total}");
    assert!(
        max_per_worker <= 2,
        "per-worker ceiling breached: {max_per_worker}"
    );
    assert!(
        workers_seen.len() == 2,
        "both workers should participate, saw {workers_seen:?}"
    );
    rt_a.shutdown();
    rt_b.shutdown();
}

fn seed_queue(store: &SqliteStore, queue: &str, count: usize) -> Vec<String> {
    let mut ids = Vec::new();
    for i in 0..count {
        let id = format!("child-{i:04}");
        store
            .enqueue_child(
                "parent",
                queue,
                &id,
                "mirror_one",
                &json!({ "idx": i }),
                i as i64,
                now_ms(),
            )
            .unwrap();
        ids.push(id);
    }
    ids
}

#[test]
fn racing_claims_each_entry_claimed_once() {
    let (_dir, path) = temp_db();
    let store = Arc::new(SqliteStore::open(&path).unwrap());
    let expected = seed_queue(&store, "q", 100);

    let mut joins = Vec::new();
    for w in 0..8 {
        let store = store.clone();
        joins.push(std::thread::spawn(move || {
            let worker = format!("worker-{w}");
            let mut mine = Vec::new();
            while let Some(wf) = store.claim_next("q", &worker, None, None, now_ms()).unwrap() {
                mine.push(wf.workflow_id);
            }
            mine
        }));
    }
    let mut all: Vec<String> = joins
        .into_iter()
        .flat_map(|j| j.join().unwrap())
        .collect();
    all.sort();
    let mut expected_sorted = expected;
    expected_sorted.sort();
    assert_eq!(all, expected_sorted, "every entry claimed exactly once");
}

#[test]
fn sequential_claims_follow_enqueue_order() {
    let (_dir, path) = temp_db();
    let store = SqliteStore::open(&path).unwrap();
    let expected = seed_queue(&store, "q", 5);
    let mut order = Vec::new();
    while let Some(wf) = store.claim_next("q", "w", None, None, now_ms()).unwrap() {
        order.push(wf.workflow_id);
    }
    assert_eq!(order, expected);
}

#[test]
fn worker_at_concurrency_limit_claims_nothing() {
    let (_dir, path) = temp_db();
    let store = SqliteStore::open(&path).unwrap();
    seed_queue(&store, "q", 4);
    assert!(store.claim_next("q", "w", Some(4), Some(2), now_ms()).unwrap().is_some());
    assert!(store.claim_next("q", "w", Some(4), Some(2), now_ms()).unwrap().is_some());
    assert!(
        store.claim_next("q", "w", Some(4), Some(2), now_ms()).unwrap().is_none(),
        "worker limit must stop further claims"
    );
    assert!(
        store.claim_next("q", "w2", Some(2), Some(2), now_ms()).unwrap().is_none(),
        "global limit counts other workers' claims"
    );
}

#[test]
fn finish_workflow_transitions_only_from_pending() {
    let (_dir, path) = temp_db();
    let store = SqliteStore::open(&path).unwrap();
    store
        .insert_workflow(
            &NewWorkflow {
                workflow_id: "wf-1",
                name: "job",
                input: &json!({}),
                queue_name: None,
                parent_id: None,
                child_seq: None,
                executor_id: None,
            },
            now_ms(),
        )
        .unwrap();
    assert!(store
        .finish_workflow("wf-1", WorkflowStatus::Success, Some(&json!(1)), now_ms())
        .unwrap());
    assert!(!store
        .finish_workflow("wf-1", WorkflowStatus::Error, Some(&json!("late")), now_ms())
        .unwrap());
    let rec = store.get_workflow("wf-1").unwrap().unwrap();
    assert_eq!(rec.status, WorkflowStatus::Success);
    assert_eq!(rec.output(), Some(&json!(1)));
}

#[test]
fn successful_step_outcome_is_immutable() {
    let (_dir, path) = temp_db();
    let store = SqliteStore::open(&path).unwrap();
    store
        .insert_workflow(
            &NewWorkflow {
                workflow_id: "wf-1",
                name: "job",
                input: &json!({}),
                queue_name: None,
                parent_id: None,
                child_seq: None,
                executor_id: None,
            },
            now_ms(),
        )
        .unwrap();
    store.begin_step_attempt("wf-1", 0, "op", now_ms()).unwrap();
    store
        .finish_step("wf-1", 0, StepStatus::Success, Some(&json!("first")))
        .unwrap();
    store
        .finish_step("wf-1", 0, StepStatus::Error, Some(&json!("clobber")))
        .unwrap();
    let step = store.get_step("wf-1", 0).unwrap().unwrap();
    assert_eq!(step.status, StepStatus::Success);
    assert_eq!(step.output_or_error, Some(json!("first")));

    let again = store.begin_step_attempt("wf-1", 0, "op", now_ms()).unwrap();
    assert_eq!(again.status, StepStatus::Success);
    assert_eq!(again.attempts, 1, "a finished step never reopens");
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_recovery_adopts_each_workflow_once() {
    let (_dir, path) = temp_db();
    let stale_at = now_ms() - 60_000;
    {
        let store = SqliteStore::open(&path).unwrap();
        for i in 0..10 {
            store
                .insert_workflow(
                    &NewWorkflow {
                        workflow_id: &format!("wf-{i}"),
                        name: "ghost",
                        input: &json!({ "i": i }),
                        queue_name: None,
                        parent_id: None,
                        child_seq: None,
                        executor_id: Some("dead-exec"),
                    },
                    stale_at,
                )
                .unwrap();
        }
    }
    let rt_a = runtime(&path, "exec-a");
    let rt_b = runtime(&path, "exec-b");
    let runs = Arc::new(AtomicU32::new(0));
    register_counting(&rt_a, "ghost", runs.clone());
    register_counting(&rt_b, "ghost", runs.clone());

    let (report_a, report_b) =
        tokio::join!(rt_a.recover_pending(), rt_b.recover_pending());
    let (report_a, report_b) = (report_a.unwrap(), report_b.unwrap());

    let mut adopted: Vec<String> = report_a
        .adopted
        .iter()
        .chain(report_b.adopted.iter())
        .cloned()
        .collect();
    adopted.sort();
    let expected: Vec<String> = (0..10).map(|i| format!("wf-{i}")).collect();
    assert_eq!(adopted, expected, "each workflow adopted exactly once");

    for id in &expected {
        let rec = rt_a.wait_for_workflow(id, 10).await.unwrap();
        assert_eq!(rec.status, WorkflowStatus::Success);
    }
    assert_eq!(runs.load(Ordering::SeqCst), 10);
}

#[tokio::test(flavor = "multi_thread")]
async fn unregistered_stale_workflow_is_reported_unrecoverable() {
    let (_dir, path) = temp_db();
    {
        let store = SqliteStore::open(&path).unwrap();
        store
            .insert_workflow(
                &NewWorkflow {
                    workflow_id: "wf-orphan",
                    name: "forgotten",
                    input: &json!({}),
                    queue_name: None,
                    parent_id: None,
                    child_seq: None,
                    executor_id: Some("dead-exec"),
                },
                now_ms() - 60_000,
            )
            .unwrap();
    }
    let rt = runtime(&path, "exec-a");
    let report = rt.recover_pending().await.unwrap();
    assert!(report.adopted.is_empty());
    assert_eq!(report.unrecoverable.len(), 1);
    assert_eq!(report.unrecoverable[0].workflow_id, "wf-orphan");
    assert!(report.unrecoverable[0].reason.contains("forgotten"));
    let rec = rt.get_workflow("wf-orphan").await.unwrap().unwrap();
    assert_eq!(rec.status, WorkflowStatus::Pending, "never silently dropped");
}

#[tokio::test(flavor = "multi_thread")]
async fn terminal_children_never_regain_queue_entries() {
    let (_dir, path) = temp_db();
    let store = SqliteStore::open(&path).unwrap();
    seed_queue(&store, "q", 1);
    let wf = store.claim_next("q", "w", None, None, now_ms()).unwrap().unwrap();
    store
        .finalize_queued(&wf.workflow_id, WorkflowStatus::Success, Some(&json!(1)), now_ms())
        .unwrap();
    assert!(store.list_queue_entries("q").unwrap().is_empty());

    // A parent re-execution replays the same enqueue.
    let outcome = store
        .enqueue_child(
            "parent",
            "q",
            &wf.workflow_id,
            "mirror_one",
            &json!({ "idx": 0 }),
            0,
            now_ms(),
        )
        .unwrap();
    assert_eq!(outcome, objmirror_core::InsertOutcome::ExistingSameInput);
    assert!(
        store.list_queue_entries("q").unwrap().is_empty(),
        "a finished child must not be re-enqueued"
    );
}
