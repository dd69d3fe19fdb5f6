// DOM wiring: everything stateful lives in ChatStore, everything visual
// in render.ts; this module only attaches the two to the document.

import {
  createSession,
  fetchPatients,
  fetchPersonas,
  fetchSession,
  fetchSessionResource,
  postQuestion,
} from "./api.js";
import {
  errorBannerHtml,
  patientCardsHtml,
  personaPickerHtml,
  questionButtonsHtml,
  resourcePanelHtml,
  transcriptHtml,
} from "./render.js";
import { readSse } from "./sse.js";
import { ChatStore, decodeStreamEvent } from "./state.js";

const store = new ChatStore();

function element(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function render(): void {
  element("personas").innerHTML = personaPickerHtml(store.personas, store.selectedPersonaId);
  element("patients").innerHTML = patientCardsHtml(store.patients, store.selectedPatientId);
  const persona = store.selectedPersona;
  element("questions").innerHTML = persona ? questionButtonsHtml(persona.predefinedQuestions) : "";
  element("transcript").innerHTML = transcriptHtml(store);
  const panelHost = element("resource");
  panelHost.innerHTML = store.resourcePanel
    ? resourcePanelHtml(store.resourcePanel.ref, store.resourcePanel.body)
    : "";
  element("banner").innerHTML = store.errorBanner ? errorBannerHtml(store.errorBanner) : "";
  const input = element("question-input") as HTMLInputElement;
  const send = element("send") as HTMLButtonElement;
  input.disabled = !store.canSend;
  send.disabled = !store.canSend;
  const transcript = element("transcript");
  transcript.scrollTop = transcript.scrollHeight;
}

async function openSession(): Promise<void> {
  if (!store.selectedPersonaId || !store.selectedPatientId) return;
  try {
    const sessionId = await createSession(store.selectedPersonaId, store.selectedPatientId);
    store.openSession(sessionId);
    const url = new URL(window.location.href);
    url.searchParams.set("session", sessionId);
    window.history.replaceState(null, "", url.toString());
  } catch (error) {
    store.showError(`Could not start a session: ${(error as Error).message}`);
  }
}

/** Both the predefined-question buttons and the free-form input land here. */
async function submitQuestion(question: string): Promise<void> {
  const sessionId = store.sessionId;
  if (!sessionId || !store.canSend || !question.trim()) return;
  store.beginTurn(question);
  try {
    const response = await postQuestion(sessionId, question);
    if (!response.body) throw new Error("response has no body to stream");
    await readSse(response.body, (frame) => store.applyStream(decodeStreamEvent(frame)));
  } catch (error) {
    store.failStream((error as Error).message);
  }
}

async function openResource(ref: string): Promise<void> {
  const sessionId = store.sessionId;
  if (!sessionId) return;
  try {
    const body = await fetchSessionResource(sessionId, ref);
    store.showResource(ref, body);
  } catch (error) {
    store.showError(`Could not load ${ref}: ${(error as Error).message}`);
  }
}

async function loadDirectory(): Promise<void> {
  try {
    store.setPersonas(await fetchPersonas());
    store.setPatients(await fetchPatients());
  } catch (error) {
    store.showError(`Could not reach the service: ${(error as Error).message}`);
  }
}

async function restoreFromUrl(): Promise<void> {
  const sessionId = new URL(window.location.href).searchParams.get("session");
  if (!sessionId) return;
  try {
    store.hydrate(await fetchSession(sessionId));
  } catch {
    // stale session id in the URL; start fresh
  }
}

function wireEvents(): void {
  element("personas").addEventListener("change", (event) => {
    const target = event.target as HTMLInputElement;
    if (target.name === "persona") {
      store.selectPersona(target.value);
      void openSession();
    }
  });
  element("patients").addEventListener("click", (event) => {
    const card = (event.target as HTMLElement).closest<HTMLElement>(".patient-card");
    if (card?.dataset.patientId) {
      store.selectPatient(card.dataset.patientId);
      void openSession();
    }
  });
  element("questions").addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest<HTMLElement>(".predefined-question");
    if (button?.dataset.question) void submitQuestion(button.dataset.question);
  });
  element("transcript").addEventListener("click", (event) => {
    const chip = (event.target as HTMLElement).closest<HTMLElement>(".chip");
    if (chip?.dataset.ref) void openResource(chip.dataset.ref);
  });
  element("resource").addEventListener("click", (event) => {
    if ((event.target as HTMLElement).closest(".close-panel")) store.closeResource();
  });
  element("banner").addEventListener("click", (event) => {
    if ((event.target as HTMLElement).closest(".retry")) void loadDirectory();
  });
  const input = element("question-input") as HTMLInputElement;
  const sendQuestionFromInput = () => {
    const question = input.value;
    input.value = "";
    void submitQuestion(question);
  };
  element("send").addEventListener("click", sendQuestionFromInput);
  input.addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") sendQuestionFromInput();
  });
}

export async function start(): Promise<void> {
  store.subscribe(render);
  wireEvents();
  await loadDirectory();
  await restoreFromUrl();
  render();
}

if (typeof document !== "undefined" && document.getElementById("transcript")) {
  void start();
}
