// Pure HTML builders; app.ts attaches them to the document. Keeping these
// string-valued makes the rendering testable without a DOM.

import type { PatientItem, PersonaInfo } from "./api.js";
import type { ChatStore, TranscriptTurn } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function personaPickerHtml(personas: PersonaInfo[], selectedId: string | null): string {
  const options = personas
    .map((persona) => {
      const checked = persona.id === selectedId ? " checked" : "";
      return (
        `<label class="persona-option"><input type="radio" name="persona" value="${persona.id}"${checked}>` +
        `${escapeHtml(persona.displayName)}</label>`
      );
    })
    .join("");
  return `<fieldset class="persona-picker"><legend>Persona</legend>${options}</fieldset>`;
}

export function patientCardsHtml(patients: PatientItem[], selectedId: string | null): string {
  if (patients.length === 0) return `<p class="empty">No patients found.</p>`;
  return patients
    .map((patient) => {
      const selected = patient.id === selectedId ? " selected" : "";
      return (
        `<button class="patient-card${selected}" data-patient-id="${escapeHtml(patient.id)}">` +
        `<span class="patient-name">${escapeHtml(patient.name)}</span>` +
        `<span class="patient-meta">Born ${escapeHtml(patient.birthDate)} · ${escapeHtml(patient.gender)}</span>` +
        `</button>`
      );
    })
    .join("");
}

export function questionButtonsHtml(questions: string[]): string {
  return questions
    .map((question) => `<button class="predefined-question" data-question="${escapeHtml(question)}">${escapeHtml(question)}</button>`)
    .join("");
}

export function provenanceChipsHtml(refs: string[]): string {
  return refs
    .map((ref) => `<button class="chip" data-ref="${escapeHtml(ref)}">${escapeHtml(ref)}</button>`)
    .join("");
}

export function turnHtml(turn: TranscriptTurn): string {
  const status = turn.failed ? ` <span class="turn-failed">failed</span>` : "";
  const chips = turn.provenance.length > 0 ? `<div class="chips">${provenanceChipsHtml(turn.provenance)}</div>` : "";
  return (
    `<div class="turn${turn.failed ? " failed" : ""}">` +
    `<div class="question">Q: ${escapeHtml(turn.question)}${status}</div>` +
    `<div class="answer">${escapeHtml(turn.answer)}</div>` +
    chips +
    `</div>`
  );
}

export function transcriptHtml(store: ChatStore): string {
  const turns = store.transcript.map(turnHtml).join("");
  const live = store.streaming
    ? `<div class="turn streaming"><div class="question">Q: ${escapeHtml(store.pendingQuestion ?? "")}</div>` +
      `<div class="answer">${escapeHtml(store.streamBuffer)}<span class="cursor">▋</span></div></div>`
    : "";
  return turns + live;
}

export function resourcePanelHtml(ref: string, body: unknown): string {
  return (
    `<div class="resource-panel"><div class="resource-header">${escapeHtml(ref)}` +
    `<button class="close-panel">×</button></div>` +
    `<pre>${escapeHtml(JSON.stringify(body, null, 2))}</pre></div>`
  );
}

export function errorBannerHtml(message: string): string {
  return `<div class="error-banner">${escapeHtml(message)} <button class="retry">Retry</button></div>`;
}
