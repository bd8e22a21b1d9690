/** Recorded service responses for offline development and headless tests.
 *
 * The payloads mirror a trained toy service: three languages (cs is the
 * aligned-but-never-trained one), greek-letter concepts, 4x4 feature grids.
 */

import type { FetchLike } from "./api.js";

export const FIXTURE_INFO = {
  languages: ["cs", "en", "fr"],
  joint_dim: 64,
  image_count: 100,
  caption_count: 300,
  default_k: 10,
};

const CONCEPTS = ["alpha", "beta", "gamma", "delta", "epsilon"];

function resultsFor(text: string, k: number) {
  const concept = CONCEPTS.find((c) => text.includes(c)) ?? "alpha";
  const others = CONCEPTS.filter((c) => c !== concept);
  const hits = [];
  for (let i = 0; i < k; i++) {
    const own = i < 5;
    const name = own ? concept : others[i % others.length];
    hits.push({
      image_id: `${name}_${String(i).padStart(3, "0")}`,
      score: Number((0.95 - 0.07 * i).toFixed(4)),
    });
  }
  return hits;
}

export function fixtureHeatmap(word: string): number[][] {
  // deterministic pseudo-pattern peaked where the "object" sits
  const grid: number[][] = [];
  const seed = word.length % 4;
  for (let h = 0; h < 4; h++) {
    const row: number[] = [];
    for (let w = 0; w < 4; w++) {
      const d = Math.abs(h - seed) + Math.abs(w - 1);
      row.push(Number((1 - d * 0.35).toFixed(3)));
    }
    grid.push(row);
  }
  return grid;
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

/** A FetchLike that replays the recorded fixtures. */
export const fixtureFetch: FetchLike = async (input, init) => {
  const url = new URL(input, "http://fixture.local");
  if (url.pathname === "/info") {
    return jsonResponse(FIXTURE_INFO);
  }
  if (url.pathname === "/query/text" && init?.method === "POST") {
    const body = JSON.parse(String(init.body)) as { text: string; lang: string; k: number };
    if (!FIXTURE_INFO.languages.includes(body.lang)) {
      return jsonResponse(
        { error: "unknown_language", detail: `unknown language '${body.lang}'` },
        400,
      );
    }
    if (!body.text.trim()) {
      return jsonResponse({ error: "bad_request", detail: "empty text" }, 400);
    }
    return jsonResponse({ results: resultsFor(body.text, body.k), heatmap_available: true });
  }
  if (url.pathname === "/heatmap") {
    const word = url.searchParams.get("word") ?? "";
    if (word === "oov") {
      return jsonResponse({ error: "out_of_vocabulary", detail: `'${word}' is not in vocabulary` }, 400);
    }
    return jsonResponse(fixtureHeatmap(word));
  }
  return jsonResponse({ error: "not_found", detail: url.pathname }, 404);
};
