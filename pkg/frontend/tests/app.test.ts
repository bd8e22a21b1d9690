/** Headless round-trips against the recorded fixture service. */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, FetchLike } from "../src/api.js";
import { createApp } from "../src/app.js";
import { fixtureFetch } from "../src/fixtures.js";

function mount(fetchFn: FetchLike = fixtureFetch) {
  document.body.innerHTML = `<div id="app"></div>`;
  const root = document.getElementById("app")!;
  const app = createApp(root, new ApiClient("http://fixture.local", fetchFn));
  return { root, app };
}

describe("query round trip", () => {
  it("renders k results in descending score order", async () => {
    const { root, app } = mount();
    await app.ready;
    await app.search("a delta animal", "en", 6);
    const cards = [...root.querySelectorAll(".result-card")];
    expect(cards).toHaveLength(6);
    const scores = [...root.querySelectorAll(".score")].map((el) =>
      Number(el.textContent),
    );
    expect(scores).toEqual([...scores].sort((a, b) => b - a));
    expect(cards[0].getAttribute("data-image-id")).toContain("delta");
  });

  it("populates the language selector from /info", async () => {
    const { root, app } = mount();
    await app.ready;
    const options = [...root.querySelectorAll("#lang-select option")].map(
      (o) => o.textContent,
    );
    expect(options).toEqual(["cs", "en", "fr"]);
    expect(app.state.lang).toBe("cs");
  });
});

describe("language switch", () => {
  it("re-issues the same text against the new language", async () => {
    const calls: string[] = [];
    const counting: FetchLike = async (input, init) => {
      if (String(input).includes("/query/text")) {
        calls.push((JSON.parse(String(init?.body)) as { lang: string }).lang);
      }
      return fixtureFetch(input, init);
    };
    const { root, app } = mount(counting);
    await app.ready;
    await app.search("beta scene", "en", 4);
    expect(calls).toEqual(["en"]);
    await app.switchLanguage("fr");
    expect(calls).toEqual(["en", "fr"]);
    expect(app.state.lang).toBe("fr");
    expect(root.querySelectorAll(".result-card")).toHaveLength(4);
  });

  it("switching via the select element triggers a re-query", async () => {
    const calls: string[] = [];
    const counting: FetchLike = async (input, init) => {
      if (String(input).includes("/query/text")) {
        calls.push((JSON.parse(String(init?.body)) as { lang: string }).lang);
      }
      return fixtureFetch(input, init);
    };
    const { root, app } = mount(counting);
    await app.ready;
    await app.search("gamma", "en", 3);
    const select = root.querySelector<HTMLSelectElement>("#lang-select")!;
    select.value = "fr";
    select.dispatchEvent(new Event("change"));
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(calls).toEqual(["en", "fr"]);
  });
});

describe("heatmap overlay", () => {
  it("renders the activation table for a selected image and word", async () => {
    const { root, app } = mount();
    await app.ready;
    await app.search("alpha", "en", 3);
    app.selectImage("alpha_000");
    await app.showHeatmap("alpha");
    expect(root.querySelectorAll(".heat-cell")).toHaveLength(16);
    expect(root.querySelector(".heatmap-panel h3")!.textContent).toContain("alpha");
    expect(root.querySelector(".heat-legend")).not.toBeNull();
  });

  it("surfaces out-of-vocabulary errors inline", async () => {
    const { root, app } = mount();
    await app.ready;
    await app.search("alpha", "en", 3);
    app.selectImage("alpha_000");
    await app.showHeatmap("oov");
    const banner = root.querySelector(".error-banner");
    expect(banner).not.toBeNull();
    expect(banner!.textContent).toContain("out_of_vocabulary");
  });
});

describe("service down", () => {
  const refusing: FetchLike = async () => {
    throw new Error("ECONNREFUSED");
  };

  it("shows the error banner instead of crashing", async () => {
    const { root, app } = mount(refusing);
    await app.ready;
    expect(root.querySelector(".error-banner")).not.toBeNull();
    expect(root.querySelector(".error-banner")!.textContent).toContain("unreachable");
  });

  it("a query failure after startup also lands in the banner", async () => {
    let healthy = true;
    const flaky: FetchLike = async (input, init) => {
      if (!healthy) throw new Error("ECONNREFUSED");
      return fixtureFetch(input, init);
    };
    const { root, app } = mount(flaky);
    await app.ready;
    healthy = false;
    await app.search("alpha", "en", 3);
    expect(root.querySelector(".error-banner")).not.toBeNull();
    expect(app.state.results).toBeNull();
  });
});

describe("stale responses", () => {
  it("discards a slow response superseded by a newer query", async () => {
    const resolvers: Array<() => void> = [];
    const gated: FetchLike = async (input, init) => {
      if (String(input).includes("/query/text")) {
        await new Promise<void>((resolve) => resolvers.push(resolve));
      }
      return fixtureFetch(input, init);
    };
    const { root, app } = mount(gated);
    await app.ready;
    const first = app.search("alpha", "en", 3);
    const second = app.search("beta", "en", 3);
    // release in reverse order: the beta response lands first
    resolvers[1]();
    await second;
    resolvers[0]();
    await first;
    const top = root.querySelector(".result-card")!;
    expect(top.getAttribute("data-image-id")).toContain("beta");
  });
});
