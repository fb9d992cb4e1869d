//! Resolution of command-line flags, environment variables and the optional
//! TOML file into concrete engine settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nestcall::llm::{Decoding, HttpSettings};
use nestcall::meta_tool::{Ablation, Component};
use nestcall::nesting::NestingConfig;
use nestcall::retrieval::RetrievalConfig;
use nestcall::EngineConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Cassette,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashing,
    Http,
}

/// Flags shared by every command that builds an engine.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// Directory with one prompt template per file (defaults to the built-in set)
    #[arg(long, value_name = "DIR")]
    pub prompts: Option<PathBuf>,

    /// Switch off a pipeline component; repeatable
    #[arg(long, value_name = "COMPONENT", value_parser = parse_component)]
    pub disable: Vec<Component>,

    /// Sidecar file for the tool embedding index
    #[arg(long, value_name = "PATH")]
    pub index_cache: Option<PathBuf>,

    /// Number of fused candidates handed to the dispatcher
    #[arg(long, value_name = "N")]
    pub top_k: Option<usize>,

    /// Maximum verification rounds before giving up
    #[arg(long, value_name = "N")]
    pub max_rounds: Option<usize>,

    /// Chat backend; inferred from --cassette or --script when omitted
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,

    /// Cassette file replayed by the cassette provider
    #[arg(long, value_name = "PATH")]
    pub cassette: Option<PathBuf>,

    /// Rule file for the scripted provider
    #[arg(long, value_name = "PATH")]
    pub script: Option<PathBuf>,

    /// Record every exchange of the selected provider into a new cassette
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,

    /// Chat-completions base URL, e.g. https://host/v1
    #[arg(long, env = "NESTCALL_BASE_URL", value_name = "URL")]
    pub base_url: Option<String>,

    /// Chat model name
    #[arg(long, env = "NESTCALL_MODEL")]
    pub model: Option<String>,

    /// API key for the chat backend
    #[arg(long, env = "NESTCALL_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,

    /// Embedding backend
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,

    /// Embedding base URL (defaults to the chat base URL)
    #[arg(long, env = "NESTCALL_EMBED_BASE_URL", value_name = "URL")]
    pub embed_base_url: Option<String>,

    /// Embedding model name
    #[arg(long, env = "NESTCALL_EMBED_MODEL")]
    pub embed_model: Option<String>,

    /// API key for the embedding backend (defaults to the chat key)
    #[arg(long, env = "NESTCALL_EMBED_API_KEY", hide_env_values = true)]
    pub embed_api_key: Option<String>,
}

fn parse_component(s: &str) -> Result<Component, String> {
    s.parse()
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub toolkit: Vec<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    pub disable: Vec<String>,
    pub provider: ProviderSection,
    pub embedding: EmbeddingSection,
    pub retrieval: Option<RetrievalConfig>,
    pub nesting: Option<NestingConfig>,
    pub decoding: Option<Decoding>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: Option<ProviderKind>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub cassette: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: Option<EmbedderKind>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub batch_size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.toolkit.iter_mut().for_each(rebase);
        for p in [
            cfg.prompts.as_mut(),
            cfg.index_cache.as_mut(),
            cfg.provider.cassette.as_mut(),
            cfg.provider.script.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderChoice {
    Http(HttpSettings),
    Cassette(PathBuf),
    Scripted(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderChoice {
    Hashing,
    Http {
        settings: HttpSettings,
        batch_size: Option<usize>,
    },
}

/// Fully resolved settings for one engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub prompts: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    pub provider: ProviderChoice,
    pub record: Option<PathBuf>,
    pub embedder: EmbedderChoice,
    pub engine: EngineConfig,
}

pub fn resolve(args: &EngineArgs, file: &FileConfig) -> anyhow::Result<Resolved> {
    let p = &file.provider;
    let cassette = args.cassette.clone().or_else(|| p.cassette.clone());
    let script = args.script.clone().or_else(|| p.script.clone());
    let kind = args
        .provider
        .or(p.kind)
        .unwrap_or(if args.cassette.is_some() {
            ProviderKind::Cassette
        } else if args.script.is_some() {
            ProviderKind::Scripted
        } else if cassette.is_some() {
            ProviderKind::Cassette
        } else if script.is_some() {
            ProviderKind::Scripted
        } else {
            ProviderKind::Http
        });

    let base_url = args.base_url.clone().or_else(|| p.base_url.clone());
    let api_key = args.api_key.clone().or_else(|| p.api_key.clone());
    let http_settings = |base_url: Option<String>,
                         model: Option<String>,
                         api_key: Option<String>,
                         what: &str| {
        let (Some(url), Some(model)) = (base_url, model) else {
            bail!("the {what} backend needs a base URL and a model (flags, environment or config file)");
        };
        let mut s = HttpSettings::new(url, model);
        s.api_key = api_key;
        if let Some(t) = p.timeout_secs {
            s.timeout_secs = t;
        }
        if let Some(n) = p.max_attempts {
            s.max_attempts = n;
        }
        Ok(s)
    };

    let provider = match kind {
        ProviderKind::Http => ProviderChoice::Http(http_settings(
            base_url.clone(),
            args.model.clone().or_else(|| p.model.clone()),
            api_key.clone(),
            "http chat",
        )?),
        ProviderKind::Cassette => ProviderChoice::Cassette(
            cassette.context("the cassette provider needs --cassette <PATH>")?,
        ),
        ProviderKind::Scripted => {
            ProviderChoice::Scripted(script.context("the scripted provider needs --script <PATH>")?)
        }
    };

    let e = &file.embedding;
    let embedder = match args.embedder.or(e.kind).unwrap_or(EmbedderKind::Hashing) {
        EmbedderKind::Hashing => EmbedderChoice::Hashing,
        EmbedderKind::Http => EmbedderChoice::Http {
            settings: http_settings(
                args.embed_base_url
                    .clone()
                    .or_else(|| e.base_url.clone())
                    .or(base_url),
                args.embed_model.clone().or_else(|| e.model.clone()),
                args.embed_api_key
                    .clone()
                    .or_else(|| e.api_key.clone())
                    .or(api_key),
                "http embedding",
            )?,
            batch_size: e.batch_size,
        },
    };

    let mut ablation = Ablation::default();
    for name in &file.disable {
        let c: Component = name.parse().map_err(anyhow::Error::msg)?;
        ablation = ablation.disable(c);
    }
    for c in &args.disable {
        ablation = ablation.disable(*c);
    }

    let mut retrieval = file.retrieval.clone().unwrap_or_default();
    if let Some(k) = args.top_k {
        retrieval.top_k = k;
    }
    retrieval.validate().map_err(anyhow::Error::new)?;
    let mut nesting = file.nesting.unwrap_or_default();
    if let Some(n) = args.max_rounds {
        nesting.max_rounds = n;
    }

    Ok(Resolved {
        prompts: args.prompts.clone().or_else(|| file.prompts.clone()),
        index_cache: args
            .index_cache
            .clone()
            .or_else(|| file.index_cache.clone()),
        provider,
        record: args.record.clone(),
        embedder,
        engine: EngineConfig {
            retrieval,
            nesting,
            ablation,
            decoding: file.decoding.unwrap_or_default(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let file: FileConfig = toml::from_str(
            "disable = [\"rewriter\"]\n[provider]\nkind = \"http\"\nbase_url = \"http://file/v1\"\nmodel = \"m-file\"\n[retrieval]\ntop_k = 7\n",
        )
        .unwrap();
        let args = EngineArgs {
            model: Some("m-flag".into()),
            top_k: Some(4),
            disable: vec![Component::Dispatcher],
            ..Default::default()
        };
        let r = resolve(&args, &file).unwrap();
        let ProviderChoice::Http(s) = &r.provider else {
            panic!()
        };
        assert_eq!(s.base_url, "http://file/v1");
        assert_eq!(s.model, "m-flag");
        assert_eq!(r.engine.retrieval.top_k, 4);
        assert!(r.engine.ablation.rewriter && r.engine.ablation.dispatcher);
        assert_eq!(r.embedder, EmbedderChoice::Hashing);
    }

    #[test]
    fn http_without_model_is_an_error() {
        let err = resolve(&EngineArgs::default(), &FileConfig::default()).unwrap_err();
        assert!(err.to_string().contains("base URL and a model"));
    }

    #[test]
    fn cassette_flag_selects_cassette() {
        let args = EngineArgs {
            cassette: Some("c.json".into()),
            ..Default::default()
        };
        let r = resolve(&args, &FileConfig::default()).unwrap();
        assert_eq!(r.provider, ProviderChoice::Cassette("c.json".into()));
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }
}
