#include "stanceforge/cli.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "stanceforge/annotation.hpp"
#include "stanceforge/corpus.hpp"
#include "stanceforge/diagnostics.hpp"
#include "stanceforge/embed_io.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/evaluation.hpp"
#include "stanceforge/strategies.hpp"

namespace stanceforge {

namespace fs = std::filesystem;

namespace {

// "-" or empty writes to stdout.
void emit(const std::string& out, const std::string& contents) {
  if (out.empty() || out == "-") {
    std::cout << contents;
    std::cout.flush();
    return;
  }
  write_file_atomic(out, contents);
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::string question_from(const std::string& text, const std::string& file) {
  if (!text.empty() && !file.empty()) throw ValidationError("give either --question or --question-file, not both");
  if (!file.empty()) {
    auto q = read_file(file);
    while (!q.empty() && (q.back() == '\n' || q.back() == '\r')) q.pop_back();
    return q;
  }
  if (text.empty()) throw ValidationError("a question is required (--question or --question-file)");
  return text;
}

std::vector<StanceLabel> stances_from(const std::string& name) {
  if (name == "both") return {StanceLabel::Favor, StanceLabel::Against};
  return {parse_stance(name)};
}

// ---------------------------------------------------------------------------

struct PromptArgs {
  std::string question, question_file, stance = "both", out;
};

void add_prompt(CLI::App& app, PromptArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("prompt", "Print the generation prompt for a question and stance");
  cmd->add_option("--question", a.question, "Question text");
  cmd->add_option("--question-file", a.question_file, "File holding the question text");
  cmd->add_option("--stance", a.stance, "favor, against or both")->capture_default_str();
  cmd->add_option("--out", a.out, "Output file (default stdout)");
  cmd->callback([&] {
    run = [&] {
      const auto q = question_from(a.question, a.question_file);
      std::string text;
      for (auto s : stances_from(a.stance)) {
        if (!text.empty()) text += "\n";
        text += make_prompt(q, s) + "\n";
      }
      emit(a.out, text);
    };
  });
}

struct ClientArgs {
  std::string url;
  double timeout = 30.0;
  int retries = 3;
  std::size_t batch_size = 32;
  std::size_t parallelism = 1;

  void add(CLI::App* cmd, const std::string& env) {
    cmd->add_option("--url", url, "Endpoint base URL (default $" + env + ")");
    cmd->add_option("--timeout", timeout, "Per-request timeout in seconds")->capture_default_str();
    cmd->add_option("--retries", retries, "Retries per request")->capture_default_str();
  }
  ClientConfig config() const {
    ClientConfig c;
    c.url = url;
    c.timeout_seconds = timeout;
    c.retries = retries;
    c.batch_size = batch_size;
    c.parallelism = parallelism;
    return c;
  }
};

struct GenerateArgs {
  std::string question, question_file, question_id, out;
  std::size_t m = 0;
  ClientArgs client;
};

void add_generate(CLI::App& app, GenerateArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("generate", "Build a balanced synthetic corpus from the generation endpoint");
  cmd->add_option("--question", a.question, "Question text");
  cmd->add_option("--question-file", a.question_file, "File holding the question text");
  cmd->add_option("--question-id", a.question_id, "Question id")->required();
  cmd->add_option("--m", a.m, "Synthetic corpus size M (even)")->required();
  cmd->add_option("--out", a.out, "Output corpus JSONL")->required();
  a.client.add(cmd, "STANCEFORGE_GEN_URL");
  cmd->callback([&] {
    run = [&] {
      const auto q = question_from(a.question, a.question_file);
      if (a.m == 0 || a.m % 2) throw ValidationError("--m must be positive and even, got " + std::to_string(a.m));
      const auto config = generate_config_from_env(a.client.config());
      if (config.url.empty()) throw ValidationError("no generation endpoint (--url or STANCEFORGE_GEN_URL)");
      const auto favor_prompt = make_prompt(q, StanceLabel::Favor);
      const auto against_prompt = make_prompt(q, StanceLabel::Against);
      std::vector<Comment> favor, against;
      // Alternate stances so any prefix of the work stays near balance.
      for (std::size_t i = 0; i < a.m / 2; ++i) {
        favor.push_back({"", a.question_id, generate_comments(config, favor_prompt, 1).front(), {}, Origin::Synthetic});
        against.push_back(
            {"", a.question_id, generate_comments(config, against_prompt, 1).front(), {}, Origin::Synthetic});
      }
      const auto synth = build_synthetic_corpus(a.question_id, favor, against);
      std::size_t n_favor = 0;
      for (const auto& c : synth.base.comments) n_favor += c.label == StanceLabel::Favor;
      if (synth.m != a.m || 2 * n_favor != a.m) throw ValidationError("generated corpus is not balanced");
      write_file_atomic(a.out, format_corpus(synth.base.comments));
    };
  });
}

struct EmbedArgs {
  std::string corpus, out;
  ClientArgs client;
};

void add_embed(CLI::App& app, EmbedArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("embed", "Embed a corpus through the embedding endpoint");
  cmd->add_option("--corpus", a.corpus, "Corpus JSONL")->required();
  cmd->add_option("--out", a.out, "Output file (EMB1, or JSONL for a .jsonl name)")->required();
  a.client.add(cmd, "STANCEFORGE_EMBED_URL");
  cmd->add_option("--batch-size", a.client.batch_size, "Texts per request")->capture_default_str();
  cmd->add_option("--parallelism", a.client.parallelism, "Concurrent requests")->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      const auto corpus = load_corpus(a.corpus);
      const auto config = embed_config_from_env(a.client.config());
      if (config.url.empty()) throw ValidationError("no embedding endpoint (--url or STANCEFORGE_EMBED_URL)");
      write_embeddings(fetch_embeddings(config, corpus.comments), a.out);
    };
  });
}

struct SplitArgs {
  std::string corpus, out;
  std::uint64_t seed = 0;
};

void add_split(CLI::App& app, SplitArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("split", "Split a corpus into train and test ids");
  cmd->add_option("--corpus", a.corpus, "Corpus JSONL")->required();
  cmd->add_option("--seed", a.seed, "Split seed")->required();
  cmd->add_option("--out", a.out, "Output split JSON")->required();
  cmd->callback([&] { run = [&] { save_split(split_corpus(load_corpus(a.corpus), a.seed), a.out); }; });
}

struct SelectArgs {
  std::string strategy, pool, split, refs, ref_labels, pool_probs, labeled, labeled_probs, out;
  std::optional<std::size_t> k;
  double budget = 0.0;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

void add_select(CLI::App& app, SelectArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("select", "Select the most informative pool comments");
  cmd->add_option("--strategy", a.strategy, "sqbc, cal or random")->required();
  cmd->add_option("--pool", a.pool, "Pool embeddings")->required();
  cmd->add_option("--split", a.split, "Restrict the pool to the train ids of this split");
  cmd->add_option("--budget", a.budget, "Fraction of the pool to select, in (0, 1]")->required();
  cmd->add_option("--out", a.out, "Output selection JSON")->required();
  cmd->add_option("--k", a.k, "Neighbors (sqbc default M/2, cal default 10)");
  cmd->add_option("--seed", a.seed, "Seed for random selection")->capture_default_str();
  cmd->add_option("--refs", a.refs, "Synthetic reference embeddings (sqbc)");
  cmd->add_option("--ref-labels", a.ref_labels, "Labeled synthetic corpus JSONL (sqbc)");
  cmd->add_option("--pool-probs", a.pool_probs, "Model probabilities for the pool (cal)");
  cmd->add_option("--labeled", a.labeled, "Labeled embeddings (cal)");
  cmd->add_option("--labeled-probs", a.labeled_probs, "Model probabilities for the labeled set (cal)");
  cmd->add_option("--threads", a.threads, "Worker threads, 0 for all cores")->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      const auto strategy = parse_strategy(a.strategy);
      auto pool = read_embeddings(a.pool);
      if (!a.split.empty()) pool = pool.subset(load_split(a.split).train_ids);
      auto need = [](const std::string& value, const char* flag) {
        if (value.empty()) throw ValidationError(std::string(flag) + " is required for this strategy");
      };
      SelectionResult result;
      switch (strategy) {
        case Strategy::Sqbc: {
          need(a.refs, "--refs");
          need(a.ref_labels, "--ref-labels");
          const auto refs = read_embeddings(a.refs);
          const auto labels = load_corpus(a.ref_labels).labels();
          const auto k = a.k.value_or(default_k(refs.size()));
          result = select_most_informative(sqbc_scores(pool, refs, labels, k, a.threads), a.budget, k);
          break;
        }
        case Strategy::Cal: {
          need(a.pool_probs, "--pool-probs");
          need(a.labeled, "--labeled");
          need(a.labeled_probs, "--labeled-probs");
          const auto labeled = read_embeddings(a.labeled);
          const auto k = a.k.value_or(10);
          result = select_cal(cal_scores(pool, read_probabilities(a.pool_probs), labeled,
                                         read_probabilities(a.labeled_probs), k, a.threads),
                              a.budget, k);
          break;
        }
        case Strategy::Random:
          result = random_select(pool.ids(), a.budget, a.seed);
          break;
      }
      save_selection(result, a.out);
    };
  });
}

struct DiagnoseArgs {
  std::string corpus, log_base = "natural", embeddings, real, real_labels, synth, synth_labels, out;
};

void add_diagnose(CLI::App& app, DiagnoseArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("diagnose", "Entropy, alignment and projection diagnostics");
  cmd->require_subcommand(1);

  auto* entropy = cmd->add_subcommand("entropy", "Word entropy quartile summary (JSON)");
  entropy->add_option("--corpus", a.corpus, "Corpus JSONL")->required();
  entropy->add_option("--log-base", a.log_base, "natural or base2")->capture_default_str();
  entropy->add_option("--out", a.out, "Output file (default stdout)");
  entropy->callback([&] {
    run = [&] { emit(a.out, format_entropy_summary(entropy_summary(load_corpus(a.corpus), parse_log_base(a.log_base)))); };
  });

  auto add_pair = [&](CLI::App* sub) {
    sub->add_option("--real", a.real, "Real embeddings")->required();
    sub->add_option("--real-labels", a.real_labels, "Labeled real corpus JSONL")->required();
    sub->add_option("--synth", a.synth, "Synthetic embeddings")->required();
    sub->add_option("--synth-labels", a.synth_labels, "Labeled synthetic corpus JSONL")->required();
  };

  auto* alignment = cmd->add_subcommand("alignment", "Per-class centroid alignment report (JSON)");
  add_pair(alignment);
  alignment->add_option("--out", a.out, "Output file (default stdout)");
  alignment->callback([&] {
    run = [&] {
      const auto report = alignment_report(read_embeddings(a.real), load_corpus(a.real_labels).labels(),
                                           read_embeddings(a.synth), load_corpus(a.synth_labels).labels());
      emit(a.out, format_alignment_report(report));
    };
  });

  auto* project = cmd->add_subcommand("project", "2-D principal projection (CSV id,x,y)");
  project->add_option("--embeddings", a.embeddings, "Embeddings")->required();
  project->add_option("--out", a.out, "Output file (default stdout)");
  project->callback([&] { run = [&] { emit(a.out, format_projection_csv(project_2d(read_embeddings(a.embeddings)))); }; });

  auto* plot = cmd->add_subcommand("plot", "SVG scatter of synthetic points and real class centroids");
  add_pair(plot);
  plot->add_option("--out", a.out, "Output SVG")->required();
  plot->callback([&] {
    run = [&] {
      emit(a.out, render_alignment_svg(read_embeddings(a.real), load_corpus(a.real_labels).labels(),
                                       read_embeddings(a.synth), load_corpus(a.synth_labels).labels()));
    };
  });
}

struct SessionArgs {
  std::string data_dir, selection, corpus, question;
};

void add_session(CLI::App& app, SessionArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("session", "Create an annotation session and print its id");
  cmd->add_option("--data-dir", a.data_dir, "Session directory (default $STANCEFORGE_DATA_DIR or ./sessions)");
  cmd->add_option("--selection", a.selection, "Selection JSON")->required();
  cmd->add_option("--corpus", a.corpus, "Corpus JSONL holding the selected ids")->required();
  cmd->add_option("--question", a.question, "Question shown to annotators");
  cmd->callback([&] {
    run = [&] {
      AnnotationStore store(a.data_dir.empty() ? env_or("STANCEFORGE_DATA_DIR", "sessions") : a.data_dir);
      std::cout << store.create_session(load_selection(a.selection), load_corpus(a.corpus), a.question) << "\n";
    };
  });
}

struct ServeArgs {
  std::string listen, data_dir, static_dir, token;
};

void add_serve(CLI::App& app, ServeArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("serve", "Run the annotation service");
  cmd->add_option("--listen", a.listen, "host:port (default $STANCEFORGE_LISTEN or 127.0.0.1:8080; port 0 picks one)");
  cmd->add_option("--data-dir", a.data_dir, "Session directory (default $STANCEFORGE_DATA_DIR or ./sessions)");
  cmd->add_option("--static-dir", a.static_dir, "Directory served at / (the web console)");
  cmd->add_option("--token", a.token, "Bearer token required on /sessions (default $STANCEFORGE_TOKEN)");
  cmd->callback([&] {
    run = [&] {
      const auto [host, port] =
          parse_listen_address(a.listen.empty() ? env_or("STANCEFORGE_LISTEN", "127.0.0.1:8080") : a.listen);
      AnnotationStore store(a.data_dir.empty() ? env_or("STANCEFORGE_DATA_DIR", "sessions") : a.data_dir);
      ServiceOptions options;
      options.bearer_token = a.token.empty() ? env_or("STANCEFORGE_TOKEN", "") : a.token;
      options.static_dir = a.static_dir;

      // Signals are taken synchronously by this thread so the server can
      // shut down outside a signal handler.
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      AnnotationServer server(store, options);
      const int bound = server.bind(host, port);
      if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
      std::thread loop([&] { server.listen_after_bind(); });
      server.wait_until_ready();
      std::cout << "listening on http://" << host << ":" << bound << std::endl;
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
      loop.join();
    };
  });
}

struct SweepArgs {
  std::string config, out_dir;
  std::optional<std::size_t> parallelism;
};

void add_sweep(CLI::App& app, SweepArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("sweep", "Run an evaluation grid");
  cmd->add_option("--config", a.config, "Sweep config JSON")->required();
  cmd->add_option("--out-dir", a.out_dir, "Output directory (resumes from its cells.jsonl)")->required();
  cmd->add_option("--parallelism", a.parallelism, "Concurrent cells (overrides the config)");
  cmd->callback([&] {
    run = [&] {
      auto config = load_sweep_config(a.config);
      if (a.parallelism) config.parallelism = *a.parallelism;
      const auto out = run_sweep(config, a.out_dir);
      std::cerr << out.records.size() << " cells: " << out.executed << " run, " << out.resumed << " resumed, "
                << out.failed << " failed\n";
    };
  });
}

struct EvalArgs {
  std::vector<std::string> records;
  std::string csv, text;
};

void add_eval(CLI::App& app, EvalArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("eval", "Aggregate evaluation records into result tables");
  cmd->add_option("--records", a.records, "Record JSONL files")->required();
  cmd->add_option("--csv", a.csv, "CSV table output");
  cmd->add_option("--text", a.text, "Text table output (default stdout)");
  cmd->callback([&] {
    run = [&] {
      std::vector<EvalRecord> all;
      for (const auto& path : a.records) {
        auto more = load_records(path);
        all.insert(all.end(), more.begin(), more.end());
      }
      const auto table = aggregate(all);
      if (!a.csv.empty()) write_file_atomic(a.csv, render_table_csv(table));
      emit(a.text, render_table_text(table));
    };
  });
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"stanceforge: active-learning sample selection for stance detection"};
  app.name("stanceforge");
  app.require_subcommand(1);

  std::function<void()> run;
  PromptArgs prompt;
  GenerateArgs generate;
  EmbedArgs embed;
  SplitArgs split;
  SelectArgs select;
  DiagnoseArgs diagnose;
  SessionArgs session;
  ServeArgs serve;
  SweepArgs sweep;
  EvalArgs eval;
  add_prompt(app, prompt, run);
  add_generate(app, generate, run);
  add_embed(app, embed, run);
  add_split(app, split, run);
  add_select(app, select, run);
  add_diagnose(app, diagnose, run);
  add_session(app, session, run);
  add_serve(app, serve, run);
  add_sweep(app, sweep, run);
  add_eval(app, eval, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    if (run) run();
    return 0;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace stanceforge
