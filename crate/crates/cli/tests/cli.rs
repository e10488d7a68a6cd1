use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn mfake() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfake"))
}

fn run(args: &[&str]) -> Output {
    mfake().args(args).output().expect("spawn mfake")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// rc-setup, register-user and register-sp into `dir`.
fn provision(dir: &Path, n: &str) {
    let rc = p(dir, "rc.dir");
    for args in [
        vec![
            "rc-setup", "--n", n, "--d", "0.25", "--out", &rc, "--seed", "1",
        ],
        vec![
            "register-user",
            "--rc",
            &rc,
            "--out",
            &p(dir, "user.dir"),
            "--seed",
            "2",
        ],
        vec![
            "register-sp",
            "--rc",
            &rc,
            "--out",
            &p(dir, "sp.dir"),
            "--seed",
            "3",
        ],
    ] {
        let o = run(&args);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

fn session_args<'a>(dir: &'a Path, owned: &'a mut Vec<String>) -> Vec<&'a str> {
    *owned = vec![p(dir, "rc.dir"), p(dir, "user.dir"), p(dir, "sp.dir")];
    vec![
        "run-session",
        "--rc",
        &owned[0],
        "--user",
        &owned[1],
        "--sp",
        &owned[2],
    ]
}

fn is_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.chars().all(|c| c.is_ascii_hexdigit())
}

#[test]
fn end_to_end_session_prints_matching_fingerprints_only() {
    let dir = tempfile::tempdir().unwrap();
    provision(dir.path(), "64");
    let mut owned = Vec::new();
    let mut args = session_args(dir.path(), &mut owned);
    args.extend(["--seed", "9"]);
    let o = run(&args);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("user: accepted"), "{out}");
    assert!(out.contains("sp: accepted"), "{out}");
    let fp = out
        .lines()
        .find_map(|l| l.strip_prefix("keys match: "))
        .expect("keys match line");
    assert!(is_hex(fp, 16));
    assert!(
        out.split_whitespace().all(|w| !is_hex(w, 64)),
        "full key leaked: {out}"
    );

    args.push("--unsafe-print-key");
    let out = stdout(&run(&args));
    let full: Vec<&str> = out
        .lines()
        .filter_map(|l| l.split_once(" key: ").map(|(_, k)| k))
        .collect();
    assert_eq!(full.len(), 2);
    assert_eq!(full[0], full[1]);
    assert!(is_hex(full[0], 64) && full[0].starts_with(fp));

    let mut tcp = args.clone();
    tcp.pop();
    tcp.extend(["--transport", "tcp"]);
    assert!(stdout(&run(&tcp)).contains(&format!("keys match: {fp}")));
}

#[test]
fn wrong_alpha_and_revocation_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    provision(dir.path(), "16");
    let mut owned = Vec::new();
    let mut args = session_args(dir.path(), &mut owned);
    args.extend(["--seed", "4"]);

    let mut wrong = args.clone();
    wrong.push("--wrong-alpha");
    let o = run(&wrong);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("sp: aborted at MU2 (authentication tag mismatch)"));

    let rc = p(dir.path(), "rc.dir");
    let user = p(dir.path(), "user.dir");
    let o = run(&["revoke", "--rc", &rc, "--user", &user]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("revoked "));
    assert!(stdout(&run(&["revoke", "--rc", &rc, "--user", &user])).starts_with("already revoked"));

    let o = run(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("sp: aborted at MU1 (credential revoked)"));
}

#[test]
fn tcp_between_processes_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    provision(dir.path(), "16");
    let rc = p(dir.path(), "rc.dir");
    let mut server = mfake()
        .args(["run-session", "--rc", &rc, "--sp", &p(dir.path(), "sp.dir")])
        .args(["--listen", "127.0.0.1:0", "--seed", "5"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(server.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first
        .strip_prefix("listening on ")
        .expect("listen line")
        .to_string();

    let client = run(&[
        "run-session",
        "--rc",
        &rc,
        "--user",
        &p(dir.path(), "user.dir"),
        "--connect",
        &addr,
        "--seed",
        "5",
    ]);
    assert!(client.status.success(), "{}", stdout(&client));
    let sp_line = lines.next().unwrap().unwrap();
    assert!(server.wait().unwrap().success());

    let user_line = stdout(&client).lines().next().unwrap().to_string();
    let fp = |l: &str| l.rsplit(' ').next().unwrap().to_string();
    assert!(user_line.starts_with("user: accepted"));
    assert!(sp_line.starts_with("sp: accepted"));
    assert_eq!(fp(&user_line), fp(&sp_line));

    let mut owned = Vec::new();
    let mut args = session_args(dir.path(), &mut owned);
    args.extend(["--seed", "5"]);
    assert!(stdout(&run(&args)).contains(&format!("keys match: {}", fp(&user_line))));
}

#[test]
fn tamper_test_covers_every_byte() {
    let o = run(&["tamper-test", "--all-bytes", "--n", "8", "--seed", "6"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    let body: Vec<&str> = out.lines().filter(|l| l.contains(" offset ")).collect();
    assert_eq!(body.len(), 448);
    assert!(body.iter().all(|l| l.contains("rejected, aborted by ")));
    assert!(out.contains("MS2 offset  31 mask 0xff: rejected, aborted by user"));
    assert!(
        out.ends_with("coverage: 448/448 rejected (100.00%)\n"),
        "{out}"
    );

    let o = run(&[
        "tamper-test",
        "--random",
        "20",
        "--quiet",
        "--n",
        "8",
        "--seed",
        "6",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "coverage: 20/20 rejected (100.00%)");
}

#[test]
fn tamper_test_uses_registered_directories() {
    let dir = tempfile::tempdir().unwrap();
    provision(dir.path(), "8");
    let o = run(&[
        "tamper-test",
        "--rc",
        &p(dir.path(), "rc.dir"),
        "--user",
        &p(dir.path(), "user.dir"),
        "--sp",
        &p(dir.path(), "sp.dir"),
        "--random",
        "10",
        "--quiet",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn rate_sweep_csv_is_monotone() {
    let o = run(&[
        "rate-sweep",
        "--d-min",
        "0.05",
        "--d-max",
        "0.5",
        "--points",
        "10",
        "--seed",
        "7",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(
        lines.next(),
        Some("d,fmr,fnmr,genuine_pairs,impostor_pairs")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
        assert!(w[1][1] >= w[0][1], "fmr");
        assert!(w[1][2] <= w[0][2], "fnmr");
    }
    assert!(rows[0][2] > rows[9][2], "fnmr should fall across the grid");
    assert!(String::from_utf8_lossy(&o.stderr).contains("EER"));
}

#[test]
fn rate_sweep_over_feature_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    std::fs::write(&csv, "a,0,0\na,0.01,0\nb,5,5\nb,5.02,5\n").unwrap();
    let out_csv = dir.path().join("s.csv");
    let o = run(&[
        "rate-sweep",
        "--features",
        csv.to_str().unwrap(),
        "--d-min",
        "0.5",
        "--d-max",
        "50",
        "--points",
        "3",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out_csv).unwrap();
    assert!(
        text.lines().nth(1).unwrap().starts_with("0.5,0,0,2,4"),
        "{text}"
    );

    std::fs::write(&csv, "a,0,0\nb,1\n").unwrap();
    let o = run(&["rate-sweep", "--features", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn config_file_supplies_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("mfake.conf");
    std::fs::write(
        &conf,
        format!(
            "# shared\nn = 8\nd = 0.5\nout = {}\nseed = 1\npoints = 3\n",
            p(dir.path(), "rc.dir")
        ),
    )
    .unwrap();
    let o = run(&["--config", conf.to_str().unwrap(), "rc-setup", "--n", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("n=12, d=0.5"), "{}", stdout(&o));
    let params = std::fs::read_to_string(dir.path().join("rc.dir/params.txt")).unwrap();
    assert!(params.contains("n=12"));
}

#[test]
fn seeded_setup_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    provision(a.path(), "8");
    provision(b.path(), "8");
    for f in [
        "rc.dir/params.txt",
        "rc.dir/rc-secret.bin",
        "user.dir/device.bin",
        "sp.dir/sp.bin",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
