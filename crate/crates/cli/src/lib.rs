//! Batch experiment runner around the `fockflow` engine: declarative run
//! files, parameter sweeps, scaling fits, scattering tables, and oracle
//! checks, all emitting CSV/JSON with a config hash for reproducibility.

pub mod experiments;
pub mod output;
pub mod runfile;

/// Errors at the runner level, mapped onto the documented exit codes:
/// 0 success, 2 schema/configuration error, 3 integrator abort.
#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Engine(fockflow::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(msg) => write!(f, "schema error: {msg}"),
            CliError::Engine(e) => write!(f, "engine error: {e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fockflow::Error> for CliError {
    fn from(e: fockflow::Error) -> Self {
        match e {
            fockflow::Error::InvalidConfig(msg) => CliError::Schema(msg),
            other => CliError::Engine(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) | CliError::Io(_) => 2,
            CliError::Engine(e) => match e {
                fockflow::Error::StepUnderflow { .. } | fockflow::Error::NonFiniteState { .. } => 3,
                _ => 2,
            },
        }
    }
}

/// Map `f` over `items` on a scoped worker pool; the output order matches
/// the input order regardless of completion order.
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if threads <= 1 {
        return items.into_iter().map(f).collect();
    }
    let tagged: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let queue = std::sync::Mutex::new(tagged);
    let done = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().pop();
                match next {
                    Some((idx, item)) => {
                        let r = f(item);
                        done.lock().unwrap().push((idx, r));
                    }
                    None => break,
                }
            });
        }
    });
    let mut out = done.into_inner().unwrap();
    out.sort_by_key(|(idx, _)| *idx);
    out.into_iter().map(|(_, r)| r).collect()
}
