/** Wires state, API client and renderers into the page. */

import { ApiClient, ApiError } from "./api.js";
import { clampK, initialState, QueryState, RequestGate } from "./state.js";
import {
  renderErrorBanner,
  renderHeatmapOverlay,
  renderLanguageSelector,
  renderResultsGrid,
  renderStatus,
} from "./render.js";

export interface App {
  state: QueryState;
  search(text: string, lang?: string, k?: number): Promise<void>;
  switchLanguage(lang: string): Promise<void>;
  selectImage(imageId: string): void;
  showHeatmap(word: string): Promise<void>;
  ready: Promise<void>;
}

const TEMPLATE = `
  <div class="error-slot"></div>
  <form class="query-bar">
    <input id="query-input" type="text" placeholder="describe an image" autocomplete="off" />
    <span class="lang-slot"></span>
    <input id="k-input" type="number" min="1" max="50" value="10" aria-label="result count" />
    <button id="search-btn" type="submit">search</button>
    <span class="status-slot"></span>
  </form>
  <div class="results-slot"></div>
  <aside class="heatmap-slot">
    <input id="word-input" type="text" placeholder="word for activation map" />
  </aside>
`;

export function createApp(root: HTMLElement, client: ApiClient): App {
  const state = initialState();
  const gate = new RequestGate();
  root.innerHTML = TEMPLATE;

  const slot = (selector: string): HTMLElement => {
    const el = root.querySelector<HTMLElement>(selector);
    if (!el) throw new Error(`missing ${selector} in app template`);
    return el;
  };

  const errorSlot = slot(".error-slot");
  const langSlot = slot(".lang-slot");
  const resultsSlot = slot(".results-slot");
  const heatmapSlot = slot(".heatmap-slot");
  const statusSlot = slot(".status-slot");
  const queryInput = root.querySelector<HTMLInputElement>("#query-input")!;
  const kInput = root.querySelector<HTMLInputElement>("#k-input")!;
  const wordInput = root.querySelector<HTMLInputElement>("#word-input")!;

  let heatmapPanel = document.createElement("div");
  heatmapSlot.appendChild(heatmapPanel);

  function redraw(): void {
    errorSlot.innerHTML = renderErrorBanner(state.error);
    langSlot.innerHTML = renderLanguageSelector(state.languages, state.lang);
    resultsSlot.innerHTML = renderResultsGrid(state.results, state.selectedImage);
    statusSlot.innerHTML = renderStatus(state.pending);
    heatmapPanel.innerHTML = renderHeatmapOverlay(state.heatmap, state.selectedWord);
    const select = root.querySelector<HTMLSelectElement>("#lang-select");
    if (select) {
      select.addEventListener("change", () => {
        void app.switchLanguage(select.value);
      });
    }
    for (const card of resultsSlot.querySelectorAll<HTMLElement>(".result-card")) {
      card.addEventListener("click", () => {
        app.selectImage(card.dataset.imageId ?? "");
      });
    }
  }

  function fail(err: unknown): void {
    if (err instanceof ApiError) {
      state.error = `${err.code}: ${err.message}`;
    } else {
      state.error = `service unreachable: ${err instanceof Error ? err.message : String(err)}`;
    }
    state.pending = false;
    redraw();
  }

  const app: App = {
    state,

    async search(text: string, lang?: string, k?: number): Promise<void> {
      state.text = text;
      if (lang !== undefined) state.lang = lang;
      if (k !== undefined) state.k = clampK(k);
      if (!state.text.trim() || !state.lang) return;
      const seq = gate.next();
      state.pending = true;
      state.error = null;
      redraw();
      try {
        const resp = await client.queryText(state.text, state.lang, state.k);
        if (!gate.isCurrent(seq)) return; // a newer query superseded this one
        state.results = resp.results;
        state.heatmapAvailable = resp.heatmap_available;
        state.pending = false;
        redraw();
      } catch (err) {
        if (!gate.isCurrent(seq)) return;
        fail(err);
      }
    },

    async switchLanguage(lang: string): Promise<void> {
      state.lang = lang;
      if (state.text.trim()) {
        await app.search(state.text);
      } else {
        redraw();
      }
    },

    selectImage(imageId: string): void {
      state.selectedImage = imageId;
      state.heatmap = null;
      redraw();
    },

    async showHeatmap(word: string): Promise<void> {
      state.selectedWord = word;
      if (!state.selectedImage || !word.trim()) return;
      try {
        state.heatmap = await client.heatmap(word, state.lang, state.selectedImage);
        state.error = null;
        redraw();
      } catch (err) {
        fail(err);
      }
    },

    ready: Promise.resolve(),
  };

  root.querySelector("form.query-bar")!.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void app.search(queryInput.value, undefined, Number(kInput.value));
  });
  wordInput.addEventListener("change", () => {
    void app.showHeatmap(wordInput.value);
  });

  app.ready = (async () => {
    try {
      const info = await client.info();
      state.languages = info.languages;
      state.lang = info.languages[0] ?? "";
      state.k = clampK(info.default_k);
      kInput.value = String(state.k);
      state.error = null;
    } catch (err) {
      if (err instanceof ApiError) {
        state.error = `${err.code}: ${err.message}`;
      } else {
        state.error = `service unreachable: ${err instanceof Error ? err.message : String(err)}`;
      }
    }
    redraw();
  })();

  return app;
}
