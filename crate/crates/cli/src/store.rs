//! On-disk layout of the RC, user and SP directories.
//!
//! ```text
//! rc.dir/   params.txt  rc-secret.bin  revoked.txt
//! user.dir/ device.bin  template.csv
//! sp.dir/   sp.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use mfake_core::biosim::{load_features_csv, write_features_csv};
use mfake_core::harness::Deployment;
use mfake_core::pki::{RcState, RevocationList, SpRecord, SystemParams, UserDeviceRecord};

pub const PARAMS: &str = "params.txt";
pub const RC_SECRET: &str = "rc-secret.bin";
pub const REVOKED: &str = "revoked.txt";
pub const DEVICE: &str = "device.bin";
pub const TEMPLATE: &str = "template.csv";
pub const SP: &str = "sp.bin";

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn load_params(rc_dir: &Path) -> Result<SystemParams> {
    let path = rc_dir.join(PARAMS);
    let text = String::from_utf8(read(&path)?).context("params.txt is not UTF-8")?;
    SystemParams::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_rc(rc_dir: &Path) -> Result<RcState> {
    let params = load_params(rc_dir)?;
    RcState::from_parts(&read(&rc_dir.join(RC_SECRET))?, params)
        .with_context(|| format!("loading RC secret from {}", rc_dir.display()))
}

pub fn save_rc(rc_dir: &Path, rc: &RcState) -> Result<()> {
    ensure_dir(rc_dir)?;
    write_atomic(&rc_dir.join(PARAMS), rc.params().to_text().as_bytes())?;
    write_atomic(&rc_dir.join(RC_SECRET), &rc.secret_to_bytes())?;
    restrict(&rc_dir.join(RC_SECRET));
    Ok(())
}

pub fn revocation_list(rc_dir: &Path) -> Result<RevocationList> {
    let path = rc_dir.join(REVOKED);
    RevocationList::open(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_device(user_dir: &Path) -> Result<UserDeviceRecord> {
    let path = user_dir.join(DEVICE);
    UserDeviceRecord::from_bytes(&read(&path)?)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn save_device(user_dir: &Path, device: &UserDeviceRecord, template: &[f64]) -> Result<()> {
    ensure_dir(user_dir)?;
    write_atomic(&user_dir.join(DEVICE), &device.to_bytes())?;
    restrict(&user_dir.join(DEVICE));
    let mut csv = Vec::new();
    write_features_csv(
        &[(format!("user-{}", device.uid), template.to_vec())],
        &mut csv,
    )?;
    write_atomic(&user_dir.join(TEMPLATE), &csv)
}

/// The simulated finger: the first row of `template.csv`.
pub fn load_template(user_dir: &Path) -> Result<Vec<f64>> {
    first_row(&user_dir.join(TEMPLATE))
}

pub fn first_row(path: &Path) -> Result<Vec<f64>> {
    load_features_csv(path)
        .with_context(|| format!("reading {}", path.display()))?
        .into_iter()
        .next()
        .map(|(_, v)| v)
        .ok_or_else(|| anyhow!("{} has no rows", path.display()))
}

pub fn load_sp(sp_dir: &Path) -> Result<SpRecord> {
    let path = sp_dir.join(SP);
    SpRecord::from_bytes(&read(&path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_sp(sp_dir: &Path, sp: &SpRecord) -> Result<()> {
    ensure_dir(sp_dir)?;
    write_atomic(&sp_dir.join(SP), &sp.to_bytes())?;
    restrict(&sp_dir.join(SP));
    Ok(())
}

pub struct Dirs {
    pub rc: PathBuf,
    pub user: PathBuf,
    pub sp: PathBuf,
}

impl Dirs {
    pub fn load_deployment(&self) -> Result<Deployment> {
        Ok(Deployment {
            rc: load_rc(&self.rc)?,
            device: load_device(&self.user)?,
            template: load_template(&self.user)?,
            sp: load_sp(&self.sp)?,
            revocations: revocation_list(&self.rc)?,
        })
    }
}

#[cfg(unix)]
fn restrict(path: &Path) {
    use std::os::unix::fs::PermissionsExt;
    let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o600));
}

#[cfg(not(unix))]
fn restrict(_: &Path) {}
