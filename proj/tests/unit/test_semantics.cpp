#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "../support/tempdir.hpp"
#include "pda/errors.hpp"
#include "pda/llm_http.hpp"
#include "pda/semantics.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a macro named _res.
#include "httplib.h"

using namespace pda;
using pda::testing::TempDir;

namespace {

const char* kLongJumpPhases =
    "Step 1: think about it.\n"
    "In the start phase, the person would run down the track to gain speed. "
    "In the middle phase, the person would plant one foot and push off the ground. "
    "In the end phase, the person would extend their legs and land in the sand.";
const char* kLongJumpGlobal =
    "The person would sprint down the track and jump forward into the sandpit.";

ScriptedLlmClient long_jump_client() {
  ScriptedLlmClient client("scripted", "m1");
  client.add(build_phase_prompt("LongJump", 3), kLongJumpPhases);
  client.add(build_global_prompt("LongJump"), kLongJumpGlobal);
  return client;
}

class AlwaysFails : public LlmClient {
 public:
  std::string complete(const std::string&) override { throw ProviderError("offline"); }
  std::string provider() const override { return "scripted"; }
  std::string model() const override { return "m1"; }
};

DescriptionTable two_class_table() {
  DescriptionTable t;
  t.put({"a", {{Phase::Start, "The person would alpha beta."}, {Phase::Global, "The person would gamma."}}});
  t.put({"b", {{Phase::Start, "The person would delta."}, {Phase::Global, "The person would eps zeta."}}});
  return t;
}

}  // namespace

TEST(SemanticsExamples, PhasePromptLongJump) {
  EXPECT_EQ(build_phase_prompt("LongJump", 3),
            "Decompose the action of LongJump into coherent three phases based on the natural "
            "temporal progression of the action. Please provide the output step by step.");
}

TEST(SemanticsExamples, PhasePromptSpellsCount) {
  const auto p = build_phase_prompt("X", 2);
  EXPECT_NE(p.find("coherent two phases"), std::string::npos);
  EXPECT_NE(build_phase_prompt("PoleVault", 3).find("PoleVault"), std::string::npos);
  EXPECT_EQ(build_global_prompt("LongJump"), "Describe how a person does LongJump.");
}

TEST(SemanticsExamples, PhasePromptRejectsBadInput) {
  EXPECT_THROW(build_phase_prompt("", 3), std::invalid_argument);
  EXPECT_THROW(build_phase_prompt("X", 1), std::invalid_argument);
  EXPECT_THROW(build_phase_prompt("X", 7), std::invalid_argument);
}

TEST(SemanticsExamples, DecomposeLongJumpMatchesTableOne) {
  TempDir dir;
  DescriptionCache cache(dir.path());
  auto client = long_jump_client();
  const auto set = decompose_label("LongJump", PhaseSet::canonical(), client, cache);
  EXPECT_EQ(set.at(Phase::Start), "The person would run down the track to gain speed.");
  EXPECT_EQ(set.at(Phase::Middle), "The person would plant one foot and push off the ground.");
  EXPECT_EQ(set.at(Phase::End), "The person would extend their legs and land in the sand.");
  EXPECT_EQ(set.at(Phase::Global),
            "The person would sprint down the track and jump forward into the sandpit.");
  EXPECT_EQ(client.calls(), 2);
}

TEST(SemanticsExamples, CacheHitBypassesFailingClient) {
  TempDir dir;
  DescriptionCache cache(dir.path());
  auto good = long_jump_client();
  const auto first = decompose_label("LongJump", PhaseSet::canonical(), good, cache);
  AlwaysFails bad;
  PhaseDescriptionSet second;
  ASSERT_NO_THROW(second = decompose_label("LongJump", PhaseSet::canonical(), bad, cache));
  EXPECT_EQ(first, second);
}

TEST(SemanticsExamples, MissFailsWithProviderError) {
  TempDir dir;
  DescriptionCache cache(dir.path());
  AlwaysFails bad;
  EXPECT_THROW(decompose_label("LongJump", PhaseSet::canonical(), bad, cache), ProviderError);
}

TEST(SemanticsExamples, UnparseableAnswerCarriesRawText) {
  TempDir dir;
  DescriptionCache cache(dir.path());
  ScriptedLlmClient client("scripted", "m1");
  client.add(build_phase_prompt("Dive", 3), "no idea");
  try {
    decompose_label("Dive", PhaseSet::with_count(3), client, cache);
    FAIL() << "expected a parse error";
  } catch (const DecompositionParseError& e) {
    EXPECT_EQ(e.raw_response(), "no idea");
  }
}

TEST(SemanticsExamples, WrapDescription) {
  EXPECT_EQ(wrap_description("The person would run down the track to gain speed."),
            "a video of people's motion that the person would run down the track to gain speed.");
  EXPECT_THROW(wrap_description(""), std::invalid_argument);
  const auto once = wrap_description("The person would jump.");
  EXPECT_THROW(wrap_description(once), std::invalid_argument);
}

TEST(SemanticsExamples, IdentityProjectionGivesEncoderRows) {
  const auto table = two_class_table();
  StubTextEncoder enc(3, 7);
  PhaseProjection proj("p", 3, 3);
  proj.weight.value = Matrix::Identity(3, 3);
  const auto bank = encode_phase_bank({"a", "b"}, table, enc, Phase::Start, proj);
  EXPECT_EQ(bank.embeddings.row(0).transpose(),
            enc.encode(wrap_description(table.get("a").at(Phase::Start))));
  EXPECT_EQ(bank.embeddings.row(1).transpose(),
            enc.encode(wrap_description(table.get("b").at(Phase::Start))));
  EXPECT_EQ(bank.class_index.at("b"), 1);
}

TEST(SemanticsExamples, AffineProjectionByHand) {
  // Lexicon pins each wrapped text to a known unit vector: every token of the
  // wrapped sentence maps to the same vector.
  std::unordered_map<std::string, Vector> lex;
  Vector e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  for (const auto& tok : tokenize(wrap_description("The person would alpha."))) lex[tok] = e1;
  DescriptionTable table;
  table.put({"a", {{Phase::Middle, "The person would alpha."}}});
  StubTextEncoder enc(3, 1, lex);
  Matrix W(3, 3);
  W << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  RowVector b(3);
  b << 0.5, -1, 2;
  PhaseProjection proj("p", 3, 3);
  proj.weight.value = W;
  proj.bias.value = b;
  const auto bank = encode_phase_bank({"a"}, table, enc, Phase::Middle, proj);
  // x W + b with x = e1 picks the first row of W.
  const double expected[3] = {1 + 0.5, 2 - 1, 3 + 2};
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(bank.embeddings(0, j), expected[j], 1e-12);

  // Second class through its own lexicon.
  std::unordered_map<std::string, Vector> lex2;
  for (const auto& tok : tokenize(wrap_description("The person would beta."))) lex2[tok] = e2;
  StubTextEncoder enc2(3, 1, lex2);
  DescriptionTable t2;
  t2.put({"b", {{Phase::Middle, "The person would beta."}}});
  const auto bank2 = encode_phase_bank({"b"}, t2, enc2, Phase::Middle, proj);
  const double expected2[3] = {4 + 0.5, 5 - 1, 6 + 2};
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(bank2.embeddings(0, j), expected2[j], 1e-12);
}

TEST(SemanticsExamples, MissingDescriptionNamesClassAndPhase) {
  const auto table = two_class_table();
  StubTextEncoder enc(4, 0);
  PhaseProjection proj("p", 4, 4);
  try {
    encode_phase_bank({"a"}, table, enc, Phase::End, proj);
    FAIL();
  } catch (const KeyError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'a'"), std::string::npos);
    EXPECT_NE(msg.find("end"), std::string::npos);
  }
  EXPECT_THROW(table.get("zzz"), KeyError);
}

TEST(SemanticsProperty, VocabPermutationPermutesRows) {
  const auto table = two_class_table();
  StubTextEncoder enc(5, 3);
  std::mt19937_64 rng(11);
  PhaseProjection proj("p", 5, 4);
  proj.init(rng);
  const auto ab = encode_phase_bank({"a", "b"}, table, enc, Phase::Global, proj);
  const auto ba = encode_phase_bank({"b", "a"}, table, enc, Phase::Global, proj);
  EXPECT_EQ(ab.embeddings.row(0), ba.embeddings.row(1));
  EXPECT_EQ(ab.embeddings.row(1), ba.embeddings.row(0));
  EXPECT_EQ(ab.embeddings.rows(), 2);
  EXPECT_EQ(ab.embeddings.cols(), 4);
}

TEST(SemanticsProperty, ProjectionsAreIndependentPerPhase) {
  const auto table = two_class_table();
  StubTextEncoder enc(4, 3);
  std::mt19937_64 rng(5);
  PhaseProjection ps("start", 4, 4), pg("global", 4, 4);
  ps.init(rng);
  pg.init(rng);
  const auto before = encode_phase_bank({"a", "b"}, table, enc, Phase::Global, pg);
  ps.weight.value.array() += 1.0;
  const auto after = encode_phase_bank({"a", "b"}, table, enc, Phase::Global, pg);
  EXPECT_EQ(before.embeddings, after.embeddings);
}

TEST(SemanticsProperty, EncoderIsPureAndUnitNorm) {
  std::mt19937_64 rng(99);
  const char* words[] = {"run", "jump", "the", "pole", "sand", "track", "fast"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) text += std::string(words[rng() % 7]) + " ";
    StubTextEncoder a(16, trial), b(16, trial);
    const Vector va = a.encode(text), vb = b.encode(text);
    EXPECT_EQ(va, vb);
    EXPECT_NEAR(va.norm(), 1.0, 1e-12);
  }
}

TEST(SemanticsProperty, CacheRoundTripIsByteStable) {
  TempDir dir;
  DescriptionCache cache(dir.path());
  auto client = long_jump_client();
  decompose_label("LongJump", PhaseSet::canonical(), client, cache);
  const auto a = cache.lookup("scripted", "m1", "LongJump", 4);
  const auto b = cache.lookup("scripted", "m1", "LongJump", 4);
  ASSERT_TRUE(a && b);
  DescriptionTable ta, tb;
  ta.put(*a);
  tb.put(*b);
  EXPECT_EQ(ta.to_json(), tb.to_json());
  EXPECT_FALSE(cache.lookup("scripted", "m1", "LongJump", 3));
  EXPECT_FALSE(cache.lookup("other", "m1", "LongJump", 4));
}

TEST(SemanticsProperty, TrackingSourceRecordsAccess) {
  const auto table = two_class_table();
  TrackingDescriptionSource tracked(table);
  StubTextEncoder enc(4, 0);
  encode_phase_texts({"b"}, tracked, enc, Phase::Start);
  EXPECT_EQ(tracked.accessed(), std::set<std::string>{"b"});
}

TEST(SemanticsExamples, ParseAnswerLastOccurrenceWins) {
  const std::string raw =
      "In the start phase, the person would walk. In the middle phase, the person would hop. "
      "In the end phase, the person would stop. Summary: In the start phase, the person would "
      "sprint.";
  const auto parsed = parse_phase_answer(raw, {Phase::Start, Phase::Middle, Phase::End});
  EXPECT_EQ(parsed.at(Phase::Start), "The person would sprint.");
  EXPECT_EQ(parsed.at(Phase::End), "The person would stop.");
}

TEST(SemanticsExamples, ChatCompletionsAgainstLocalServer) {
  httplib::Server server;
  std::string seen_auth, seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PDA_TEST_LLM_KEY", "sk-test", 1);
  ChatCompletionsClient::Options opt;
  opt.base_url = "http://127.0.0.1:" + std::to_string(port);
  opt.api_key_env = "PDA_TEST_LLM_KEY";
  opt.model = "local-model";
  ChatCompletionsClient client(opt);
  std::string reply;
  EXPECT_NO_THROW(reply = client.complete("ping"));
  server.stop();
  th.join();
  EXPECT_EQ(reply, "hello");
  EXPECT_EQ(seen_auth, "Bearer sk-test");
  EXPECT_NE(seen_body.find("\"local-model\""), std::string::npos);
  EXPECT_NE(seen_body.find("ping"), std::string::npos);
}

TEST(SemanticsExamples, ChatCompletionsWithoutKeyIsProviderError) {
  ::unsetenv("PDA_TEST_MISSING_KEY");
  ChatCompletionsClient::Options opt;
  opt.api_key_env = "PDA_TEST_MISSING_KEY";
  ChatCompletionsClient client(opt);
  EXPECT_THROW(client.complete("x"), ProviderError);
}
