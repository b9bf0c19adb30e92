//! End-to-end tests that drive the compiled binary: exit codes, CSV
//! output on stdout and on disk, validation messages, and the
//! reproducibility of benchmark runs.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphot"))
        .args(args)
        .output()
        .expect("the binary should launch")
}

/// Writes a spec under a temp directory and returns its path as a string.
fn spec_file(name: &str, text: &str) -> String {
    let dir = std::env::temp_dir().join("graphot-cli-tests");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn out_path(name: &str) -> String {
    std::env::temp_dir()
        .join("graphot-cli-tests")
        .join(name)
        .to_str()
        .unwrap()
        .to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The summary row of a solve CSV, split into cells.
fn summary_cells(csv: &str) -> Vec<String> {
    let row = csv
        .lines()
        .find(|l| l.starts_with("1,summary,"))
        .unwrap_or_else(|| panic!("no summary row in:\n{csv}"));
    row.split(',').map(str::to_owned).collect()
}

const BARY: &str = r#"
format_version = 1

[problem]
family = "barycenter"
n_leaves = 3

[grid]
d = 6

[marginals]
seed = 4

[solver]
kind = "tree-local"
"#;

#[test]
fn solve_prints_a_converged_summary() {
    let path = spec_file("solve_ok.toml", BARY);
    let out = run(&["solve", &path]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let csv = stdout(&out);
    assert!(
        csv.starts_with("format_version,record,iteration"),
        "unexpected header:\n{csv}"
    );
    assert!(csv.lines().any(|l| l.starts_with("1,iteration,")));

    let cells = summary_cells(&csv);
    assert_eq!(cells.len(), 14);
    assert_eq!(cells[8], "true", "converged cell: {cells:?}");
    assert!(!cells[9].is_empty(), "final cost is missing: {cells:?}");
    assert!(!cells[10].is_empty(), "rounded cost is missing: {cells:?}");
    assert_eq!(cells[13], "tree-local");
}

#[test]
fn a_zero_marginal_is_refused_by_name() {
    let text = r#"
format_version = 1

[problem]
family = "barycenter"
n_leaves = 2

[grid]
d = 2

[marginals]
generator = "explicit"
vectors = [[0.3, 0.7], [1.0, 0.0]]

[solver]
kind = "tree-local"
epsilon = 0.4
"#;
    let path = spec_file("solve_zero_marginal.toml", text);
    let out = run(&["solve", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("error:"), "{err}");
    assert!(err.contains("marginal 1"), "{err}");
    assert!(err.contains("non-positive"), "{err}");
}

#[test]
fn the_iteration_cap_still_writes_the_partial_trace() {
    let path = spec_file("solve_capped.toml", BARY);
    let csv_path = out_path("capped.csv");
    let out = run(&["solve", &path, "--max-iter", "1", "--out", &csv_path]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("did not converge"),
        "{}",
        stderr(&out)
    );

    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("1,iteration,")));
    let cells = summary_cells(&csv);
    assert_eq!(cells[8], "false", "converged cell: {cells:?}");
    assert_eq!(cells[2], "1", "iteration cell: {cells:?}");
}

#[test]
fn validate_accepts_every_shipped_spec() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e == "toml") != Some(true) {
            continue;
        }
        seen += 1;
        let out = run(&["validate", path.to_str().unwrap()]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{} rejected: {}",
            path.display(),
            stderr(&out)
        );
        assert!(stderr(&out).contains("spec ok"), "{}", stderr(&out));
    }
    assert!(seen >= 7, "expected the shipped specs, found {seen}");
}

#[test]
fn validate_counts_separator_neighbors() {
    // One cost clique touching three separators: the bipartite tree is
    // fine as a tree, but a cost clique must sit between exactly two
    // separators.
    let text = r#"
format_version = 1

[problem]
family = "custom"

[solver]
kind = "graph-local"
epsilon = 0.5

[custom.mot]
axes = [{ label = 0, size = 2 }, { label = 1, size = 2 }, { label = 2, size = 2 }]
cliques = [[0, 1, 2]]
separators = [[0], [1], [2]]
mjt_edges = [[0, 0], [0, 1], [0, 2]]
constraints = [
    { separator = 0, gamma = [0] },
    { separator = 1, gamma = [1] },
    { separator = 2, gamma = [2] },
]

[[custom.mot.costs]]
labels = [0, 1, 2]
values = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]

[[custom.mot.marginals]]
labels = [0]
values = [0.5, 0.5]

[[custom.mot.marginals]]
labels = [1]
values = [0.5, 0.5]

[[custom.mot.marginals]]
labels = [2]
values = [0.4, 0.6]
"#;
    let path = spec_file("validate_neighbors.toml", text);
    let out = run(&["validate", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("separator neighbors"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn validate_rejects_non_nested_intersections() {
    // The separator {0, 1} meets one neighbor in {0} and the other in
    // {1}; neither contains the other, so the local marginals cannot be
    // ordered.
    let text = r#"
format_version = 1

[problem]
family = "custom"

[solver]
kind = "graph-local"
epsilon = 0.5

[custom.mot]
axes = [
    { label = 0, size = 2 },
    { label = 1, size = 2 },
    { label = 2, size = 2 },
    { label = 3, size = 2 },
]
cliques = [[0, 2], [1, 3]]
separators = [[0, 1]]
mjt_edges = [[0, 0], [1, 0]]
constraints = [{ separator = 0, gamma = [0] }]

[[custom.mot.costs]]
labels = [0, 2]
values = [0.0, 1.0, 1.0, 0.0]

[[custom.mot.costs]]
labels = [1, 3]
values = [0.0, 1.0, 1.0, 0.0]

[[custom.mot.marginals]]
labels = [0]
values = [0.5, 0.5]
"#;
    let path = spec_file("validate_nesting.toml", text);
    let out = run(&["validate", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not nested"), "{}", stderr(&out));
}

const BENCH: &str = r#"
format_version = 1

[problem]
family = "barycenter"

[solver]
kind = "tree-local"

[bench]
sweep = "d"
points = [6]
fixed = 3
seeds = [4]
solvers = ["tree-local"]
"#;

#[test]
fn a_single_point_sweep_matches_the_solver() {
    let solve_out = run(&["solve", &spec_file("pair_solve.toml", BARY)]);
    assert_eq!(solve_out.status.code(), Some(0));
    let solve_cells = summary_cells(&stdout(&solve_out));

    let bench_out = run(&["bench", &spec_file("pair_bench.toml", BENCH)]);
    assert_eq!(
        bench_out.status.code(),
        Some(0),
        "stderr: {}",
        stderr(&bench_out)
    );
    let csv = stdout(&bench_out);
    let row: Vec<&str> = csv
        .lines()
        .nth(1)
        .unwrap_or_else(|| panic!("no data row in:\n{csv}"))
        .split(',')
        .collect();
    assert_eq!(row.len(), 19);
    assert_eq!(row[1], "barycenter");
    assert_eq!(row[3], "6");
    assert_eq!(row[5], "3");
    assert_eq!(row[6], "tree-local");

    // Same generator seed, grid, and recipe parameters: the benchmark
    // row must count exactly the iterations the solve command reports.
    assert_eq!(row[8], solve_cells[2], "per-seed iterations differ");
    assert_eq!(row[10], "true");
}

#[test]
fn bench_output_is_byte_identical_across_runs() {
    let path = spec_file("repeat_bench.toml", BENCH);
    let first = out_path("bench_a.csv");
    let second = out_path("bench_b.csv");
    assert_eq!(
        run(&["bench", &path, "--out", &first]).status.code(),
        Some(0)
    );
    assert_eq!(
        run(&["bench", &path, "--out", &second]).status.code(),
        Some(0)
    );
    let a = fs::read(&first).unwrap();
    let b = fs::read(&second).unwrap();
    assert_eq!(a, b, "benchmark CSVs differ between runs");
}

#[test]
fn the_seed_override_reaches_the_marginals() {
    let path = spec_file("solve_seeded.toml", BARY);
    let one = run(&["solve", &path, "--seed", "11"]);
    let two = run(&["solve", &path, "--seed", "12"]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(two.status.code(), Some(0));
    let cost_one = summary_cells(&stdout(&one))[9].clone();
    let cost_two = summary_cells(&stdout(&two))[9].clone();
    assert_ne!(cost_one, cost_two, "different seeds gave the same cost");
}
