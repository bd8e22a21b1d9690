/** Pure HTML renderers; every view is a function of the state alone. */

import type { ImageHit } from "./api.js";

function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderLanguageSelector(languages: string[], current: string): string {
  const options = languages
    .map(
      (lang) =>
        `<option value="${escapeHtml(lang)}"${lang === current ? " selected" : ""}>${escapeHtml(lang)}</option>`,
    )
    .join("");
  return `<select id="lang-select" aria-label="query language">${options}</select>`;
}

export function renderResultsGrid(results: ImageHit[] | null, selected: string | null): string {
  if (results === null) {
    return `<p class="hint">Type a query to search the image index.</p>`;
  }
  if (results.length === 0) {
    return `<p class="empty-notice">No results.</p>`;
  }
  const cards = results
    .map((hit, rank) => {
      const sel = hit.image_id === selected ? " selected" : "";
      return (
        `<figure class="result-card${sel}" data-image-id="${escapeHtml(hit.image_id)}" data-rank="${rank + 1}">` +
        `<div class="thumb" title="${escapeHtml(hit.image_id)}">${rank + 1}</div>` +
        `<figcaption><span class="image-id">${escapeHtml(hit.image_id)}</span>` +
        `<span class="score">${hit.score.toFixed(4)}</span></figcaption></figure>`
      );
    })
    .join("");
  return `<div class="results-grid">${cards}</div>`;
}

export function renderErrorBanner(message: string | null): string {
  if (!message) return "";
  return `<div class="error-banner" role="alert">${escapeHtml(message)}</div>`;
}

/** Map a cosine in [-1, 1] onto a red-through-blue overlay color. */
export function heatColor(value: number): string {
  const v = Math.max(-1, Math.min(1, value));
  const warm = Math.round(255 * Math.max(0, v));
  const cold = Math.round(255 * Math.max(0, -v));
  const alpha = (0.15 + 0.7 * Math.abs(v)).toFixed(2);
  return `rgba(${warm}, 40, ${cold}, ${alpha})`;
}

export function renderHeatmapOverlay(heatmap: number[][] | null, word: string): string {
  if (!heatmap || heatmap.length === 0) {
    return `<p class="hint">Select an image and enter a word to see its activation map.</p>`;
  }
  const rows = heatmap
    .map(
      (row) =>
        `<tr>${row
          .map(
            (v) =>
              `<td class="heat-cell" style="background-color: ${heatColor(v)}" title="${v.toFixed(3)}"></td>`,
          )
          .join("")}</tr>`,
    )
    .join("");
  const legend =
    `<div class="heat-legend"><span>-1</span>` +
    `<span class="legend-bar"></span><span>+1</span></div>`;
  return (
    `<div class="heatmap-panel"><h3>activation for “${escapeHtml(word)}”</h3>` +
    `<table class="heatmap-table">${rows}</table>${legend}</div>`
  );
}

export function renderStatus(pending: boolean): string {
  return pending ? `<span class="spinner" aria-busy="true">searching…</span>` : "";
}
