// Copyright 2026 The rmgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <charconv>
#include <clocale>
#include <filesystem>

#include "rmgap/io.hpp"
#include "rmgap/tasks.hpp"

namespace rmgap {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rmgap_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Jsonl, FieldOrderAndLineEndings) {
  PreferenceDataset d;
  d.examples.emplace_back(TokenSeq{1, 2}, TokenSeq{3}, TokenSeq{4, 5});
  const std::string text = to_jsonl(d, {Json{{"graph", "3 0-1"}}});
  EXPECT_EQ(text, "{\"prompt\":[1,2],\"chosen\":[3],\"rejected\":[4,5],\"meta\":{\"graph\":\"3 0-1\"}}\n");
  EXPECT_EQ(text.find('\r'), std::string::npos);
}

TEST(Jsonl, RoundTripsHamDataset) {
  HamTaskConfig c;
  c.n = 6;
  c.train_count = 20;
  c.test_count = 5;
  const HamDataset d = make_ham_dataset(c);
  const std::string text = to_jsonl(d.train);
  const PreferenceDataset back = parse_jsonl(text, "train");
  EXPECT_EQ(back.examples, d.train.examples);
  EXPECT_EQ(to_jsonl(back), text);
  EXPECT_EQ(to_jsonl(make_ham_dataset(c).train), text);
}

TEST(Jsonl, ErrorsNameTheLine) {
  try {
    parse_jsonl("{\"prompt\":[1],\"chosen\":[2],\"rejected\":[3]}\n\n{\"prompt\":[1],\"chosen\":[2]}\n");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 3:", 0), 0u) << e.what();
  }
  EXPECT_THROW(parse_jsonl("not json\n"), InputError);
  EXPECT_THROW(load_jsonl("/nonexistent/rmgap/file.jsonl"), InputError);
}

TEST(Csv, LocaleFreeNumbersAndQuoting) {
  const char* old = std::setlocale(LC_NUMERIC, nullptr);
  const std::string saved = old ? old : "C";
  std::setlocale(LC_NUMERIC, "de_DE.UTF-8");  // ignored when unavailable
  CsvWriter w({"name", "value", "flag", "count"});
  w.cell("a,b").cell(0.1).cell(true).cell(std::size_t{7});
  w.end_row();
  w.cell("q\"x").cell(-2.5e-300).cell(false).cell(std::size_t{0});
  w.end_row();
  std::setlocale(LC_NUMERIC, saved.c_str());
  EXPECT_EQ(w.str(), "name,value,flag,count\n\"a,b\",0.1,true,7\n\"q\"\"x\",-2.5e-300,false,0\n");
  w.cell(1.0);
  EXPECT_THROW(w.end_row(), ContractError);
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -0.0, 5e-324}) {
    const std::string s = format_double(v);
    double back = 1.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    EXPECT_EQ(back, v) << s;
  }
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(format_double(-INFINITY), "-inf");
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  const fs::path dir = scratch("atomic");
  write_file_atomic(dir / "sub" / "a.txt", "first");
  write_file_atomic(dir / "sub" / "a.txt", "second");
  EXPECT_EQ(read_file(dir / "sub" / "a.txt"), "second");
  EXPECT_FALSE(fs::exists(dir / "sub" / "a.txt.tmp"));
  fs::remove_all(dir);
}

TEST(Manifest, ChecksumsAndRunBlock) {
  const fs::path dir = scratch("manifest");
  const Json config = {{"n", 5}};
  const RunInfo info = run_info(config, 9);
  EXPECT_EQ(info, run_info(Json{{"n", 5}}, 9));
  EXPECT_NE(info.config_hash, run_info(Json{{"n", 6}}, 9).config_hash);
  Manifest m(dir, info);
  m.write("x.csv", "a,b\n1,2\n");
  m.write("y.json", "{}\n");
  m.finish();
  const Json j = Json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(j["seed"], 9);
  EXPECT_EQ(j["config_hash"], info.config_hash);
  ASSERT_EQ(j["files"].size(), 2u);
  EXPECT_EQ(j["files"][0]["file"], "x.csv");
  EXPECT_EQ(j["files"][0]["checksum"], hex64(fnv1a64("a,b\n1,2\n")));
  EXPECT_EQ(j["files"][0]["bytes"], 8);
  EXPECT_TRUE(j.contains("wall_clock_unix_ms"));
  EXPECT_EQ(run_json(info)["version"], kArtifactVersion);
  fs::remove_all(dir);
}

TEST(Hashing, KnownFnvVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

}  // namespace
}  // namespace rmgap
