use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Fixed 17-significant-digit rendering, so equal runs give equal bytes.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Comma-separated table with a mandatory header and LF line endings.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: format!("{}\n", header.join(",")), width: header.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.width);
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// `key = value` lines.
#[derive(Default)]
pub struct KeyValues(String);

impl KeyValues {
    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.0.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.put(key, num(value))
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.0)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> io::Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map(|_| target)
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_NAME: &str = ".qsource.lock";

impl DirLock {
    pub fn acquire(dir: &Path) -> io::Result<Self> {
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(io::Error::new(
                e.kind(),
                format!("{} is locked by another run (remove {} if it is stale)", dir.display(), path.display()),
            )),
            Err(e) => Err(e),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

const PREAMBLE: &str = "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n";

/// Gnuplot script rendering the study's table to a PNG next to it.
pub fn plot_script(study: crate::config::Study) -> String {
    use crate::config::Study;
    let body = match study {
        Study::Growth => {
            "set output 'trace.png'\nset xlabel 't'\nset multiplot layout 2,1\n\
             plot 'trace.csv' using 1:5 with lines\n\
             plot 'trace.csv' using 1:6 with lines\nunset multiplot\n"
        }
        Study::Sweep => {
            "set output 'sweep.png'\nset xlabel 'lambda'\nset ylabel 'rate'\n\
             plot 'sweep.csv' using 1:3 with linespoints\n"
        }
        Study::Spectrum => {
            "set output 'spectrum.png'\nset xlabel 'lambda'\nset ylabel 'Re alpha'\n\
             plot 'spectrum.csv' using 1:2 with linespoints\n"
        }
        Study::Local => {
            "set output 'local.png'\nset xlabel 't'\n\
             plot 'local.csv' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n"
        }
        Study::Semiclassical => {
            "set output 'semiclassical.png'\nset logscale xy\nset xlabel 'epsilon'\nset ylabel 'deviation'\n\
             stats 'semiclassical.csv' using 2 nooutput\n\
             plot for [k=0:int(STATS_max)] 'semiclassical.csv' using 1:($2 == k ? $5 : 1/0) with linespoints title sprintf('theta %d', k)\n"
        }
    };
    format!("{PREAMBLE}{body}")
}
