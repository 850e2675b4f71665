// gretel: train / evaluate / infer / topics / analyze / synth.
//
// Configuration comes from an INI-style key=value file (--config) merged
// with command-line overrides (command line wins). The resolved
// configuration is written into the output directory of every run.
// Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "gretel/eval.hpp"
#include "gretel/model.hpp"
#include "gretel/synth.hpp"
#include "gretel/trainer.hpp"

namespace fs = std::filesystem;
using namespace gretel;

namespace {

struct RunConfig {
  std::string train_file, valid_file, test_file, stopwords_file;
  std::string out_dir = "runs/gretel";
  TrainConfig train;
  TopicConfig topic;
  EncoderConfig enc;
  AblationFlags flags;
  int ext = 3;       // extraction budget v
  int min_freq = 1;  // BoW vocabulary
  int max_vocab = 2000;
  int workers = 1;
  bool desk_scale = true;
};

// Full-scale profile (--full-scale): applied before CLI/file overrides.
void apply_full_scale(RunConfig& c) {
  c.train.warmup_steps = 5000;
  c.train.total_steps = 50000;
  c.train.checkpoint_every = 1000;
  c.train.max_tokens = 6000;
  c.enc.hidden = 768;
  c.enc.heads = 12;
  c.enc.ff_width = 3072;
  c.enc.block_len = 512;
  c.enc.max_blocks = 12;
  c.topic.num_topics = 100;
  c.max_vocab = 20000;
}

void add_config_options(CLI::App& app, RunConfig& c) {
  app.add_option("--train-file", c.train_file, "training corpus (JSONL)");
  app.add_option("--valid-file", c.valid_file, "validation corpus (JSONL)");
  app.add_option("--test-file", c.test_file, "test corpus (JSONL)");
  app.add_option("--stopwords", c.stopwords_file, "stopword file, one token per line");
  app.add_option("--out-dir", c.out_dir, "output directory (env GRETEL_OUT overrides)");
  app.add_option("--lr", c.train.learning_rate, "base learning rate")->capture_default_str();
  app.add_option("--warmup", c.train.warmup_steps, "warmup steps")->capture_default_str();
  app.add_option("--total-steps", c.train.total_steps, "training steps")->capture_default_str();
  app.add_option("--checkpoint-every", c.train.checkpoint_every, "checkpoint interval")
      ->capture_default_str();
  app.add_option("--batch-size", c.train.batch_size, "documents per step")->capture_default_str();
  app.add_option("--seed", c.train.seed, "RNG seed")->capture_default_str();
  app.add_option("--max-tokens", c.train.max_tokens, "max real tokens per document")
      ->capture_default_str();
  app.add_option("--ext", c.ext, "summary length v (sentences)")->capture_default_str();
  app.add_option("--eta", c.topic.eta, "contrastive loss weight")->capture_default_str();
  app.add_option("--gamma", c.topic.gamma, "negative-sample weight")->capture_default_str();
  app.add_option("--alpha", c.topic.alpha, "Dirichlet prior concentration (0 = 1/K)")
      ->capture_default_str();
  app.add_option("--topics", c.topic.num_topics, "topic count K")->capture_default_str();
  app.add_option("--dropout", c.enc.dropout, "dropout rate")->capture_default_str();
  app.add_option("--hidden", c.enc.hidden, "encoder hidden size")->capture_default_str();
  app.add_option("--block-layers", c.enc.block_layers, "block transformer layers")
      ->capture_default_str();
  app.add_option("--doc-layers", c.enc.doc_layers, "document transformer layers")
      ->capture_default_str();
  app.add_option("--heads", c.enc.heads, "attention heads")->capture_default_str();
  app.add_option("--ff-width", c.enc.ff_width, "feed-forward width")->capture_default_str();
  app.add_option("--block-len", c.enc.block_len, "tokens per block (n)")->capture_default_str();
  app.add_option("--max-blocks", c.enc.max_blocks, "max blocks per document (m)")
      ->capture_default_str();
  app.add_option("--min-freq", c.min_freq, "BoW vocabulary min document frequency")
      ->capture_default_str();
  app.add_option("--max-vocab", c.max_vocab, "BoW vocabulary size cap")->capture_default_str();
  app.add_option("--workers", c.workers, "evaluation worker threads")->capture_default_str();
  // Ablation switches
  app.add_flag("!--no-hte", c.flags.use_hte, "disable the hierarchical encoder (flat block)");
  app.add_flag("!--no-topic-loss", c.flags.use_topic_loss, "disable reconstruction + KL");
  app.add_flag("!--no-contrastive", c.flags.use_contrastive, "disable the contrastive loss");
  app.add_flag("!--no-context", c.flags.use_context, "document topics from BoW only");
  app.add_flag("!--no-doc-transformer", c.flags.use_doc_transformer,
               "disable the document transformer stage");
}

void write_resolved_config(const CLI::App& app, const RunConfig& c) {
  fs::create_directories(c.out_dir);
  std::ofstream out(c.out_dir + "/config.ini");
  out << app.config_to_str(true, false);
}

std::set<std::string> maybe_stopwords(const RunConfig& c) {
  if (c.stopwords_file.empty()) return {};
  return load_stopwords(c.stopwords_file);
}

// ---------------------------------------------------------------------------

int cmd_train(const CLI::App& app, RunConfig& cfg) {
  auto train_docs = load_jsonl(cfg.train_file);
  auto valid_docs = load_jsonl(cfg.valid_file);
  Model model;
  model.enc_cfg = cfg.enc;
  model.top_cfg = cfg.topic;
  model.flags = cfg.flags;
  model.apply_ablation_geometry(cfg.train.max_tokens);
  model.bow_vocab = build_vocabulary(train_docs, cfg.min_freq, cfg.max_vocab,
                                     maybe_stopwords(cfg));
  model.enc_vocab = build_encoder_vocab(train_docs);
  model.enc_cfg.vocab_size = model.enc_vocab.size();
  model.init(cfg.train.seed);

  write_resolved_config(app, cfg);
  auto train_split = prepare_split(model, train_docs, cfg.train);
  auto valid_split = prepare_split(model, valid_docs, cfg.train);

  std::ofstream log(cfg.out_dir + "/log.jsonl");
  TrainState state = train(model, train_split, valid_split, cfg.train, cfg.out_dir, &log);
  std::cout << "best checkpoint: step " << state.best_step << " (validation loss "
            << state.best_val_loss << ")\n";
  return 0;
}

// Per-document selections for a corpus, optionally multi-threaded; results
// are ordered by document, independent of the thread count.
std::vector<SummarySelection> select_all(const Model& model,
                                         const std::vector<PreparedDoc>& prepared, int v,
                                         int workers) {
  std::vector<SummarySelection> selections(prepared.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Eigen::VectorXd probs = model.score_sentences(prepared[i]);
      std::vector<double> scores(probs.data(), probs.data() + probs.size());
      selections[i] = select_summary(scores, v);
    }
  };
  if (workers <= 1 || prepared.size() < 2) {
    work(0, prepared.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (prepared.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      std::size_t b = w * chunk, e = std::min(prepared.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return selections;
}

nlohmann::json evaluation_report(const Model& model, const std::vector<Document>& docs,
                                 const std::vector<PreparedDoc>& prepared,
                                 const std::vector<SummarySelection>& selections, int bins) {
  RougeScore r1{}, r2{}, rl{};
  int truncated = 0;
  std::vector<int> lengths;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    RougeReport r = score_selection(docs[i], selections[i].indices);
    r1.precision += r.r1.precision; r1.recall += r.r1.recall; r1.f1 += r.r1.f1;
    r2.precision += r.r2.precision; r2.recall += r.r2.recall; r2.f1 += r.r2.f1;
    rl.precision += r.rl.precision; rl.recall += r.rl.recall; rl.f1 += r.rl.f1;
    if (prepared[i].truncated) ++truncated;
    lengths.push_back(static_cast<int>(docs[i].num_sentences()));
  }
  const double n = static_cast<double>(docs.size());
  auto pack = [n](const RougeScore& s) {
    return nlohmann::json{{"p", s.precision / n}, {"r", s.recall / n}, {"f1", s.f1 / n}};
  };
  PositionHistogram hist = position_histogram(selections, lengths, bins);
  CooccurrenceIndex ix(docs);
  std::vector<std::vector<std::string>> topic_words;
  for (const auto& topic : model.top_words(10)) {
    std::vector<std::string> ws;
    for (const auto& [w, p] : topic) ws.push_back(w);
    topic_words.push_back(ws);
  }
  NpmiScore coherence = npmi(topic_words, ix);
  nlohmann::json report;
  report["rouge1"] = pack(r1);
  report["rouge2"] = pack(r2);
  report["rougeL"] = pack(rl);
  report["npmi_mean"] = coherence.mean;
  report["position_histogram"] = hist.frequencies;
  report["num_docs"] = docs.size();
  report["truncated_docs"] = truncated;
  return report;
}

void write_histogram_csv(const PositionHistogram& h, const std::string& path) {
  std::ofstream out(path);
  out << "bin_start,bin_end,frequency\n";
  for (std::size_t b = 0; b + 1 < h.bin_edges.size(); ++b)
    out << h.bin_edges[b] << "," << h.bin_edges[b + 1] << "," << h.frequencies[b] << "\n";
}

int cmd_evaluate(const CLI::App& app, RunConfig& cfg, const std::string& checkpoint,
                 const std::string& split_file, int bins) {
  Model model = Model::load(checkpoint);
  std::string path = split_file.empty() ? cfg.test_file : split_file;
  auto docs = load_jsonl(path);
  if (docs.empty()) throw DataError("evaluate: empty split " + path);
  auto prepared = prepare_split(model, docs, cfg.train);
  auto selections = select_all(model, prepared, cfg.ext, cfg.workers);
  nlohmann::json report = evaluation_report(model, docs, prepared, selections, bins);
  write_resolved_config(app, cfg);
  std::ofstream out(cfg.out_dir + "/report.json");
  out << report.dump(2) << "\n";
  std::vector<int> lengths;
  for (const auto& d : docs) lengths.push_back(static_cast<int>(d.num_sentences()));
  write_histogram_csv(position_histogram(selections, lengths, bins),
                      cfg.out_dir + "/position_histogram.csv");
  std::cout << "R-1 F1 " << report["rouge1"]["f1"].get<double>() << "  R-2 F1 "
            << report["rouge2"]["f1"].get<double>() << "  R-L F1 "
            << report["rougeL"]["f1"].get<double>() << "\n";
  return 0;
}

int cmd_infer(RunConfig& cfg, const std::string& checkpoint, const std::string& input,
              const std::string& output) {
  Model model = Model::load(checkpoint);
  auto docs = load_jsonl(input);
  auto prepared = prepare_split(model, docs, cfg.train);
  auto selections = select_all(model, prepared, cfg.ext, cfg.workers);
  std::ofstream out(output);
  if (!out) throw DataError("cannot write " + output);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    nlohmann::json j;
    j["id"] = docs[i].id;
    j["selected"] = selections[i].indices;
    std::vector<std::string> texts;
    for (int idx : selections[i].indices) {
      std::string joined;
      for (const auto& t : docs[i].sentences[idx]) joined += (joined.empty() ? "" : " ") + t;
      texts.push_back(joined);
    }
    j["summary"] = texts;
    out << j.dump() << "\n";
  }
  return 0;
}

int cmd_topics(RunConfig& cfg, const std::string& checkpoint, int top_w,
               const std::string& doc_id, bool sentence_topics, const std::string& corpus_file) {
  Model model = Model::load(checkpoint);
  fs::create_directories(cfg.out_dir);
  auto topics = model.top_words(top_w);
  {
    std::ofstream out(cfg.out_dir + "/topics.txt");
    for (const auto& topic : topics) {
      bool first = true;
      for (const auto& [w, p] : topic) {
        if (!first) out << "\t";
        out << w << ":" << p;
        first = false;
      }
      out << "\n";
    }
  }
  if (!doc_id.empty() || sentence_topics) {
    if (corpus_file.empty()) throw ConfigError("topics: --doc/--sentence-topics need --corpus");
    auto docs = load_jsonl(corpus_file);
    const Document* doc = nullptr;
    for (const auto& d : docs)
      if (d.id == doc_id) doc = &d;
    if (!doc) throw DataError("topics: unknown document id " + doc_id);
    PreparedDoc pd = model.prepare(*doc, cfg.ext, cfg.train.max_tokens);
    Eigen::RowVectorXd mix = model.doc_topic_mixture(pd);
    std::vector<int> order(mix.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mix(a) > mix(b); });
    std::cout << "document " << doc_id << " top topics:";
    for (int k = 0; k < std::min<int>(3, order.size()); ++k)
      std::cout << " T" << order[k] << "(" << mix(order[k]) << ")";
    std::cout << "\n";
    if (sentence_topics) {
      Mat theta_s = model.sentence_topic_means(pd);
      for (Eigen::Index j = 0; j < theta_s.rows(); ++j) {
        std::vector<int> sorder(theta_s.cols());
        std::iota(sorder.begin(), sorder.end(), 0);
        std::stable_sort(sorder.begin(), sorder.end(),
                         [&](int a, int b) { return theta_s(j, a) > theta_s(j, b); });
        std::cout << "sentence " << j << " top topics: T" << sorder[0] << " T" << sorder[1]
                  << "\n";
      }
    }
  }
  std::cout << "wrote " << cfg.out_dir << "/topics.txt\n";
  return 0;
}

int cmd_analyze(RunConfig& cfg, const std::string& checkpoint, const std::string& corpus_file,
                int bins) {
  Model model = Model::load(checkpoint);
  auto docs = load_jsonl(corpus_file);
  if (docs.empty()) throw DataError("analyze: empty corpus " + corpus_file);
  auto prepared = prepare_split(model, docs, cfg.train);

  std::vector<std::vector<std::string>> topic_top;
  for (const auto& topic : model.top_words(25)) {
    std::vector<std::string> ws;
    for (const auto& [w, p] : topic) ws.push_back(w);
    topic_top.push_back(ws);
  }
  std::vector<Eigen::RowVectorXd> mixtures;
  for (const auto& pd : prepared) mixtures.push_back(model.doc_topic_mixture(pd));
  SemanticGap gap = topic_summary_gap(docs, topic_top, mixtures, cfg.ext);

  auto selections = select_all(model, prepared, cfg.ext, cfg.workers);
  std::vector<int> lengths;
  for (const auto& d : docs) lengths.push_back(static_cast<int>(d.num_sentences()));
  PositionHistogram hist = position_histogram(selections, lengths, bins);

  fs::create_directories(cfg.out_dir);
  nlohmann::json j;
  j["oracle_summary_score"] = gap.oracle_score;
  j["topic_word_summary_score"] = gap.topic_score;
  j["lead_summary_score"] = gap.lead_score;
  j["position_histogram"] = hist.frequencies;
  j["num_docs"] = docs.size();
  std::ofstream out(cfg.out_dir + "/analysis.json");
  out << j.dump(2) << "\n";
  write_histogram_csv(hist, cfg.out_dir + "/position_histogram.csv");
  std::cout << "oracle " << gap.oracle_score << "  topic-words " << gap.topic_score << "  lead "
            << gap.lead_score << "\n";
  return 0;
}

int cmd_synth(RunConfig& cfg, SynthConfig scfg, int valid_docs, int test_docs) {
  fs::create_directories(cfg.out_dir);
  SynthConfig c = scfg;
  write_jsonl(generate_synthetic_corpus(c, "train"), cfg.out_dir + "/train.jsonl");
  c.seed = scfg.seed + 1;
  c.num_docs = valid_docs;
  write_jsonl(generate_synthetic_corpus(c, "valid"), cfg.out_dir + "/valid.jsonl");
  c.seed = scfg.seed + 2;
  c.num_docs = test_docs;
  write_jsonl(generate_synthetic_corpus(c, "test"), cfg.out_dir + "/test.jsonl");
  std::cout << "wrote " << cfg.out_dir << "/{train,valid,test}.jsonl\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRETEL extractive summarizer"};
  app.require_subcommand(1);
  RunConfig cfg;
  app.set_config("--config", "", "INI config file; command-line options override it");
  bool full_scale = false;
  app.add_flag("--full-scale", full_scale, "start from the full-scale defaults");
  app.add_flag("--desk-scale", cfg.desk_scale, "desk-scale profile (default)");
  add_config_options(app, cfg);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  auto* infer_cmd = app.add_subcommand("infer", "emit selected sentences as JSONL");
  auto* topics_cmd = app.add_subcommand("topics", "export the topic matrix");
  auto* analyze_cmd = app.add_subcommand("analyze", "semantic gap + position analysis");
  auto* synth_cmd = app.add_subcommand("synth", "generate the planted-salience corpus");

  std::string checkpoint, split_file, input_file, output_file = "inferred.jsonl";
  std::string doc_id, corpus_file;
  int bins = 10, top_w = 10;
  bool sentence_topics = false;
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--split", split_file, "corpus to evaluate (default: --test-file)");
  eval_cmd->add_option("--bins", bins, "position histogram bins");
  infer_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer_cmd->add_option("--input", input_file, "input corpus (JSONL)")->required();
  infer_cmd->add_option("--out", output_file, "output JSONL");
  topics_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  topics_cmd->add_option("--top-w", top_w, "words per topic");
  topics_cmd->add_option("--doc", doc_id, "print top topics of one document");
  topics_cmd->add_flag("--sentence-topics", sentence_topics, "print per-sentence top topics");
  topics_cmd->add_option("--corpus", corpus_file, "corpus for --doc/--sentence-topics");
  analyze_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  analyze_cmd->add_option("--corpus", corpus_file, "corpus to analyze")->required();
  analyze_cmd->add_option("--bins", bins, "position histogram bins");

  SynthConfig scfg;
  int synth_valid = 50, synth_test = 50;
  synth_cmd->add_option("--train-docs", scfg.num_docs, "training documents")
      ->capture_default_str();
  synth_cmd->add_option("--valid-docs", synth_valid, "validation documents")
      ->capture_default_str();
  synth_cmd->add_option("--test-docs", synth_test, "test documents")->capture_default_str();
  synth_cmd->add_option("--groups", scfg.num_groups, "topic groups")->capture_default_str();
  synth_cmd->add_option("--salient", scfg.salient_per_doc, "planted salient sentences per doc")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (full_scale) {
    // re-parse on top of the full-scale profile so explicit options still win
    apply_full_scale(cfg);
    cfg.desk_scale = false;
    try {
      app.clear();
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }
  }
  if (const char* env_out = std::getenv("GRETEL_OUT")) cfg.out_dir = env_out;

  try {
    if (train_cmd->parsed()) return cmd_train(app, cfg);
    if (eval_cmd->parsed()) return cmd_evaluate(app, cfg, checkpoint, split_file, bins);
    if (infer_cmd->parsed()) return cmd_infer(cfg, checkpoint, input_file, output_file);
    if (topics_cmd->parsed())
      return cmd_topics(cfg, checkpoint, top_w, doc_id, sentence_topics, corpus_file);
    if (analyze_cmd->parsed()) return cmd_analyze(cfg, checkpoint, corpus_file, bins);
    if (synth_cmd->parsed()) return cmd_synth(cfg, scfg, synth_valid, synth_test);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
