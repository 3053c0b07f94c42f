#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kecrs/chat.hpp"
#include "kecrs/corpus.hpp"
#include "kecrs/errors.hpp"
#include "kecrs/pipeline.hpp"
#include "support.hpp"

using namespace kecrs;
using namespace kecrs::testing;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + KECRS_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& body) { std::ofstream(p) << body; }

const char* kSmallConfig = R"({"epochs": 2, "d_k": 4, "d_f": 4, "d_model": 8, "batch_rec": 16, "batch_gen": 16,
                               "min_freq": 1, "seed": 1, "max_response": 12})";

}  // namespace

TEST_CASE("exit codes") {
    TempDir dir("cli-codes");
    const fs::path log = dir.path() / "log.txt";
    CHECK(run("", log) == 1);
    CHECK(run("stats", log) == 1);
    CHECK(run("stats --kg a --bogus", log) == 1);
    CHECK(run("--help", log) == 0);
    CHECK(run("stats --kg \"" + (dir.path() / "nope").string() + "\"", log) == 2);
    CHECK(slurp(log).find("error:") != std::string::npos);
    CHECK(run("stats --kg \"" + fixture("kg30").string() + "\"", log) == 0);
    CHECK(nlohmann::json::parse(slurp(log)).at("total_edges").get<int>() == 55);

    write_file(dir.path() / "bad.json", R"({"lr_rec": 0.1, "learning_rate": 2})");
    CHECK(run("synth --out \"" + (dir.path() / "s").string() + "\" --num-convs 20", log) == 0);
    const std::string kg = (dir.path() / "s" / "kg").string();
    const std::string data = (dir.path() / "s" / "data").string();
    CHECK(run("train-rec --config \"" + (dir.path() / "bad.json").string() + "\" --kg \"" + kg + "\" --data \"" + data +
                  "\" --out \"" + (dir.path() / "r").string() + "\"",
              log) == 2);
    CHECK(slurp(log).find("learning_rate") != std::string::npos);

    write_file(dir.path() / "huge.json", R"({"lr_rec": 1e300, "epochs": 3, "patience": 0})");
    CHECK(run("train-rec --config \"" + (dir.path() / "huge.json").string() + "\" --kg \"" + kg + "\" --data \"" + data +
                  "\" --out \"" + (dir.path() / "r").string() + "\"",
              log) == 3);
}

TEST_CASE("build-kg thresholds from flags") {
    TempDir dir("cli-kg");
    const fs::path log = dir.path() / "log.txt";
    const std::string records = fixture("domain_records.jsonl").string();
    REQUIRE(run("build-kg --records \"" + records + "\" --out \"" + (dir.path() / "a").string() + "\"", log) == 0);
    const auto a = nlohmann::json::parse(slurp(log));
    REQUIRE(run("build-kg --records \"" + records + "\" --out \"" + (dir.path() / "b").string() +
                    "\" --keyword 1 --cast 1",
                log) == 0);
    const auto b = nlohmann::json::parse(slurp(log));
    CHECK(b.at("total_edges").get<int>() > a.at("total_edges").get<int>());
    const auto ex = load_json("expected_domain.json");
    CHECK(a.at("total_nodes").get<int>() == ex.at("cases").at(0).at("total_nodes").get<int>());
}

TEST_CASE("synthetic pipeline end to end") {
    TempDir dir("cli-pipe");
    const fs::path log = dir.path() / "log.txt";
    const std::string root = dir.path().string();
    write_file(dir.path() / "cfg.json", kSmallConfig);
    const std::string cfg = " --config \"" + root + "/cfg.json\"";
    const std::string kg = " --kg \"" + root + "/s/kg\"";
    const std::string data = " --data \"" + root + "/s/data\"";
    REQUIRE(run("synth --out \"" + root + "/s\" --num-convs 30", log) == 0);
    REQUIRE(run("train-rec" + cfg + kg + data + " --out \"" + root + "/rec\"", log) == 0);
    CHECK(fs::exists(dir.path() / "rec" / "params.bin"));
    CHECK(slurp(dir.path() / "rec" / "loss_curve.csv").rfind("epoch,train_loss,val_loss\n", 0) == 0);
    REQUIRE(run("train-gen" + cfg + kg + data + " --rec-ckpt \"" + root + "/rec\" --out \"" + root + "/gen\"", log) == 0);
    REQUIRE(run("evaluate" + cfg + kg + data + " --rec-ckpt \"" + root + "/rec\" --gen-ckpt \"" + root +
                    "/gen\" --pred \"" + root + "/p.jsonl\" --resp \"" + root + "/r.jsonl\" --out \"" + root +
                    "/report.json\" --human-audit",
                log) == 0);
    const auto report = nlohmann::json::parse(slurp(dir.path() / "report.json"));
    CHECK(report.contains("rank"));
    CHECK(report.contains("generation"));
    CHECK(report.at("human_repetition").at("repetitive_fraction").get<double>() == 0.0);
    // logs alone reproduce the report
    REQUIRE(run("evaluate" + kg + " --pred \"" + root + "/p.jsonl\" --resp \"" + root + "/r.jsonl\"", log) == 0);
    auto again = nlohmann::json::parse(slurp(log));
    again["human_repetition"] = report.at("human_repetition");
    CHECK(again == report);

    REQUIRE(run("project --checkpoint \"" + root + "/gen\" --out \"" + root + "/proj.csv\"" + kg, log) == 0);
    CHECK(slurp(dir.path() / "proj.csv").find("entity:film0") != std::string::npos);

    const std::string chat = "chat --rec-ckpt \"" + root + "/rec\" --gen-ckpt \"" + root + "/gen\"" + kg;
    const std::string piped = "-c 'printf \"hi\\ni like comedy\\n/quit\\n\" | \"" + std::string(KECRS_CLI) + "\" " + chat + "'";
    const int status = std::system(("sh " + piped + " > \"" + log.string() + "\" 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(slurp(log).find("recommended:") != std::string::npos);
    CHECK(run(chat.substr(0, chat.find(" --gen-ckpt")) + " --gen-ckpt \"" + root + "/missing\"" + kg, log) == 2);
}

namespace {

struct TrainedSynth {
    SynthCorpus synth = synth_corpus({40, 10, 6, 30, 2});
    std::optional<Recommender> rec;
    std::optional<Generator> gen;

    TrainedSynth() {
        TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(kSmallConfig));
        const PreparedData data = prepare_data(synth.conversations, synth.graph, 0);
        const EntityLinker linker(synth.graph);
        rec.emplace(synth.graph, recommender_config(cfg), 3);
        train_recommender(*rec, rec_examples(data.split.train, linker), {}, cfg);
        const EntityEmbeddingTable table = rec->embeddings();
        gen.emplace(generator_config(cfg), build_vocab(data.split.train, 1, &synth.graph), table.H, 4);
        train_generator(*gen, gen_examples(data.split.train, *rec, table, *gen, linker), {}, cfg);
    }
};

const TrainedSynth& trained() {
    static const TrainedSynth t;
    return t;
}

}  // namespace

TEST_CASE("chat never repeats a mentioned item") {
    const TrainedSynth& t = trained();
    ChatSession s(t.synth.graph, *t.rec, *t.gen, 3, 0.1);
    std::set<EntityId> shown;
    for (const char* line : {"", "i like comedy", "what about film3 ?", "more please", "and horror", "anything else"}) {
        const std::set<EntityId> before = s.mentioned();
        const ChatReply r = s.chat_turn(line);
        for (EntityId e : r.items) {
            CHECK(before.count(e) == 0);
            CHECK(shown.insert(e).second);
        }
        CHECK(r.items.size() <= 3);
        CHECK((r.truncated == (r.items.size() < 3)));
        CHECK(r.tokens.size() <= 12);
    }
    CHECK(s.transcript().messages.size() == 12);
    CHECK(s.mentioned().size() == 10);
}

TEST_CASE("chat replay is deterministic") {
    const TrainedSynth& t = trained();
    ChatSession a(t.synth.graph, *t.rec, *t.gen);
    ChatSession b(t.synth.graph, *t.rec, *t.gen);
    for (const char* line : {"hello", "i like drama", "thanks"}) {
        const ChatReply x = a.chat_turn(line);
        const ChatReply y = b.chat_turn(line);
        CHECK(x.items == y.items);
        CHECK(x.tokens == y.tokens);
    }
}
