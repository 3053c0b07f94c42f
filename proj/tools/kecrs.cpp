// Command-line front end: graph building, training, evaluation, projection,
// synthetic data and an interactive chat loop.

#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "kecrs/chat.hpp"
#include "kecrs/corpus.hpp"
#include "kecrs/errors.hpp"
#include "kecrs/evalkit.hpp"
#include "kecrs/generator.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/pipeline.hpp"
#include "kecrs/recommender.hpp"
#include "kecrs/trainer.hpp"

namespace fs = std::filesystem;
using namespace kecrs;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 1, e.what());
    }
}

TrainConfig config_or_default(const std::string& path) {
    return path.empty() ? TrainConfig{} : TrainConfig::load(path);
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << body;
}

void build_kg(const std::string& records_path, const std::string& config_path, const std::map<std::string, int>& overrides,
              const fs::path& out) {
    std::map<std::string, int> thresholds;
    if (!config_path.empty()) {
        const nlohmann::json j = read_json_file(config_path);
        for (const auto& [k, v] : j.value("thresholds", nlohmann::json::object()).items()) thresholds[k] = v.get<int>();
    }
    for (const auto& [k, v] : overrides) {
        if (v >= 0) thresholds[k] = v;
    }
    std::ifstream in(records_path);
    if (!in) throw IngestionError("cannot open " + records_path);
    const auto records = read_domain_records(in, records_path);
    const KnowledgeGraph graph = build_domain_kg(records, KgThresholds::from_map(thresholds));
    graph.save(out);
    std::cout << graph_stats(graph).to_json().dump(2) << '\n';
}

void evaluate(const std::string& pred, const std::string& resp, const fs::path& kg_dir, const std::string& out,
              const std::string& rec_ckpt, const std::string& gen_ckpt, const std::string& data_dir,
              const std::string& config_path, const std::string& split_name, bool human_audit) {
    const KnowledgeGraph graph = KnowledgeGraph::load(kg_dir);
    const EntityLinker linker(graph);
    const TrainConfig cfg = config_or_default(config_path);
    std::optional<PreparedData> data;
    if (!data_dir.empty()) data = prepare_data(fs::path(data_dir), graph, cfg.seed);

    if (!rec_ckpt.empty() || !gen_ckpt.empty()) {
        if (rec_ckpt.empty() || gen_ckpt.empty() || !data) {
            throw LookupError("producing logs needs --rec-ckpt, --gen-ckpt and --data");
        }
        const Recommender rec = Recommender::load(rec_ckpt, graph);
        const Generator gen = Generator::load(gen_ckpt);
        const auto& convs = split_name == "train" ? data->split.train
                            : split_name == "valid" ? data->split.valid
                                                    : data->split.test;
        const EvaluationLogs logs = run_evaluation(convs, rec, gen, linker, cfg.lambda3);
        write_prediction_log(pred, logs.predictions);
        write_response_log(resp, logs.responses);
    }
    const auto predictions = read_prediction_log(pred);
    const auto responses = read_response_log(resp);
    nlohmann::json report = evaluate_logs(predictions, responses, linker);
    if (human_audit) {
        if (!data) throw LookupError("--human-audit needs --data");
        std::vector<Conversation> all = data->split.train;
        all.insert(all.end(), data->split.valid.begin(), data->split.valid.end());
        all.insert(all.end(), data->split.test.begin(), data->split.test.end());
        report["human_repetition"] = repetition_stats(human_recommendation_events(all)).to_json();
    }
    const std::string body = report.dump(2) + "\n";
    if (out.empty()) {
        std::cout << body;
    } else {
        write_text(out, body);
    }
}

void project(const fs::path& ckpt, const fs::path& out, const std::string& kg_dir) {
    const Generator gen = Generator::load(ckpt);
    std::optional<KnowledgeGraph> graph;
    if (!kg_dir.empty()) graph = KnowledgeGraph::load(kg_dir);
    const Matrix& em = gen.params().get("gen.embedding").value;
    const Matrix entities = gen.project_entities(gen.entity_table());
    const auto words = static_cast<Eigen::Index>(gen.vocab().size()) - Vocabulary::kReserved;
    Matrix rows(words + entities.rows(), em.cols());
    std::vector<std::string> labels;
    rows.topRows(words) = em.bottomRows(words);
    for (Eigen::Index i = 0; i < words; ++i) {
        labels.push_back("word:" + gen.vocab().token(static_cast<int>(i + Vocabulary::kReserved)));
    }
    rows.bottomRows(entities.rows()) = entities;
    for (Eigen::Index i = 0; i < entities.rows(); ++i) {
        const auto id = static_cast<EntityId>(i);
        labels.push_back("entity:" + (graph && graph->contains(id) ? graph->entity(id).name : std::to_string(i)));
    }
    const Projection p = pca_project(rows, std::move(labels));
    std::ofstream f(out);
    if (!f) throw IngestionError("cannot write " + out.string());
    write_projection_csv(f, p);
}

void chat(const fs::path& rec_ckpt, const fs::path& gen_ckpt, const fs::path& kg_dir, int k, double lambda3) {
    for (const fs::path& p : {rec_ckpt, gen_ckpt}) {
        if (!fs::exists(p / "manifest.json")) throw IngestionError("missing checkpoint " + p.string());
    }
    const KnowledgeGraph graph = KnowledgeGraph::load(kg_dir);
    ChatSession session(graph, Recommender::load(rec_ckpt, graph), Generator::load(gen_ckpt), k, lambda3);
    std::cout << "type a message, or /quit\n";
    std::string line;
    while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        if (line == "/quit") break;
        const ChatReply reply = session.chat_turn(line);
        std::cout << "bot: " << reply.text << '\n' << "recommended:";
        for (EntityId e : reply.items) std::cout << ' ' << graph.entity(e).name;
        if (reply.truncated) std::cout << " (fewer than " << k << " new items left)";
        std::cout << '\n';
    }
}

void synth(const SynthConfig& cfg, const fs::path& out) {
    const SynthCorpus corpus = synth_corpus(cfg);
    corpus.graph.save(out / "kg");
    fs::create_directories(out / "data");
    std::ofstream f(out / "data" / "conversations.jsonl");
    if (!f) throw IngestionError("cannot write " + (out / "data").string());
    write_conversations(f, corpus.conversations);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-enriched conversational recommender"};
    app.require_subcommand(1);

    std::string config, kg, data, out, records, rec_ckpt, gen_ckpt, pred, resp, split = "test";
    bool human_audit = false;
    int k = 3;
    double lambda3 = 0.1;
    std::map<std::string, int> overrides{{"keyword", -1}, {"cast", -1}, {"company", -1}, {"crew", -1}, {"genre", -1}};
    SynthConfig synth_cfg;

    auto* c_build = app.add_subcommand("build-kg", "Build the domain graph from movie records");
    c_build->add_option("--records", records, "Record dump (JSON lines)")->required();
    c_build->add_option("--out", out, "Output graph directory")->required();
    c_build->add_option("--config", config, "JSON file with a \"thresholds\" object");
    for (auto& [name, value] : overrides) c_build->add_option("--" + name, value, "Minimum count for " + name);

    auto* c_stats = app.add_subcommand("stats", "Print node and edge counts of a graph");
    c_stats->add_option("--kg", kg, "Graph directory")->required();

    auto* c_rec = app.add_subcommand("train-rec", "Train the recommendation module");
    c_rec->add_option("--config", config, "Training config (JSON)");
    c_rec->add_option("--kg", kg, "Graph directory")->required();
    c_rec->add_option("--data", data, "Directory holding conversations.jsonl")->required();
    c_rec->add_option("--out", out, "Checkpoint directory")->required();

    auto* c_gen = app.add_subcommand("train-gen", "Train the response generator");
    c_gen->add_option("--config", config, "Training config (JSON)");
    c_gen->add_option("--kg", kg, "Graph directory")->required();
    c_gen->add_option("--data", data, "Directory holding conversations.jsonl")->required();
    c_gen->add_option("--rec-ckpt", rec_ckpt, "Recommender checkpoint")->required();
    c_gen->add_option("--out", out, "Checkpoint directory")->required();

    auto* c_eval = app.add_subcommand("evaluate", "Compute metrics from prediction and response logs");
    c_eval->add_option("--pred", pred, "Prediction log (JSON lines)")->required();
    c_eval->add_option("--resp", resp, "Response log (JSON lines)")->required();
    c_eval->add_option("--kg", kg, "Graph directory")->required();
    c_eval->add_option("--out", out, "Report path (stdout when omitted)");
    c_eval->add_option("--rec-ckpt", rec_ckpt, "Write the logs from this recommender first");
    c_eval->add_option("--gen-ckpt", gen_ckpt, "Write the logs from this generator first");
    c_eval->add_option("--data", data, "Directory holding conversations.jsonl");
    c_eval->add_option("--config", config, "Training config (seed, lambda3)");
    c_eval->add_option("--split", split, "Split to replay")->check(CLI::IsMember({"train", "valid", "test"}));
    c_eval->add_flag("--human-audit", human_audit, "Add the repetition audit of human recommender turns");

    auto* c_proj = app.add_subcommand("project", "2-D projection of word and entity embeddings");
    c_proj->add_option("--checkpoint", gen_ckpt, "Generator checkpoint")->required();
    c_proj->add_option("--out", out, "CSV path")->required();
    c_proj->add_option("--kg", kg, "Graph directory, for entity names");

    auto* c_chat = app.add_subcommand("chat", "Interactive terminal dialogue");
    c_chat->add_option("--rec-ckpt", rec_ckpt, "Recommender checkpoint")->required();
    c_chat->add_option("--gen-ckpt", gen_ckpt, "Generator checkpoint")->required();
    c_chat->add_option("--kg", kg, "Graph directory")->required();
    c_chat->add_option("--k", k, "Items shown per turn")->check(CLI::PositiveNumber);
    c_chat->add_option("--lambda3", lambda3, "Entity bias weight in decoding")->check(CLI::NonNegativeNumber);

    auto* c_synth = app.add_subcommand("synth", "Write the synthetic graph and conversations");
    c_synth->add_option("--out", out, "Output directory")->required();
    c_synth->add_option("--num-convs", synth_cfg.num_convs)->check(CLI::PositiveNumber);
    c_synth->add_option("--num-items", synth_cfg.num_items)->check(CLI::PositiveNumber);
    c_synth->add_option("--num-attrs", synth_cfg.num_attrs)->check(CLI::PositiveNumber);
    c_synth->add_option("--vocab-size", synth_cfg.vocab_size)->check(CLI::PositiveNumber);
    c_synth->add_option("--seed", synth_cfg.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*c_build) {
            build_kg(records, config, overrides, out);
        } else if (*c_stats) {
            std::cout << graph_stats(KnowledgeGraph::load(kg)).to_json().dump(2) << '\n';
        } else if (*c_rec) {
            std::cout << run_train_rec(config_or_default(config), kg, data, out).dump(2) << '\n';
        } else if (*c_gen) {
            std::cout << run_train_gen(config_or_default(config), kg, data, rec_ckpt, out).dump(2) << '\n';
        } else if (*c_eval) {
            evaluate(pred, resp, kg, out, rec_ckpt, gen_ckpt, data, config, split, human_audit);
        } else if (*c_proj) {
            project(gen_ckpt, out, kg);
        } else if (*c_chat) {
            chat(rec_ckpt, gen_ckpt, kg, k, lambda3);
        } else if (*c_synth) {
            synth(synth_cfg, out);
        }
    } catch (const kecrs::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
