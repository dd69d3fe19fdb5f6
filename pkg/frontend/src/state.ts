// UI state store: persona/patient selection, the live stream buffer, and
// the committed transcript. One stream at a time; send stays disabled
// while a stream is open.

import type { PatientItem, PersonaInfo, SessionView } from "./api.js";
import type { SseEvent } from "./sse.js";

export type StreamEvent =
  | { event: "meta"; data: { sessionId: string; turnIndex: number } }
  | { event: "token"; data: { text: string } }
  | { event: "provenance"; data: string[] }
  | { event: "done"; data: Record<string, never> }
  | { event: "error"; data: { code: string; message: string } };

/** Decode a wire frame into a typed stream event (data lines are JSON). */
export function decodeStreamEvent(raw: SseEvent): StreamEvent {
  const data: unknown = JSON.parse(raw.data);
  switch (raw.event) {
    case "meta":
    case "token":
    case "provenance":
    case "done":
    case "error":
      return { event: raw.event, data } as StreamEvent;
    default:
      throw new Error(`unknown stream event ${raw.event}`);
  }
}

export interface TranscriptTurn {
  question: string;
  answer: string;
  provenance: string[];
  failed: boolean;
}

export interface ResourcePanel {
  ref: string;
  body: unknown;
}

export class ChatStore {
  personas: PersonaInfo[] = [];
  selectedPersonaId: string | null = null;
  patients: PatientItem[] = [];
  selectedPatientId: string | null = null;
  sessionId: string | null = null;
  transcript: TranscriptTurn[] = [];
  streaming = false;
  streamBuffer = "";
  pendingQuestion: string | null = null;
  pendingProvenance: string[] = [];
  resourcePanel: ResourcePanel | null = null;
  errorBanner: string | null = null;

  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  get selectedPersona(): PersonaInfo | null {
    return this.personas.find((p) => p.id === this.selectedPersonaId) ?? null;
  }

  get canSend(): boolean {
    return this.sessionId !== null && !this.streaming;
  }

  setPersonas(personas: PersonaInfo[]): void {
    this.personas = personas;
    this.notify();
  }

  setPatients(patients: PatientItem[]): void {
    this.patients = patients;
    this.notify();
  }

  selectPersona(id: string): void {
    this.selectedPersonaId = id;
    this.notify();
  }

  selectPatient(id: string): void {
    this.selectedPatientId = id;
    this.notify();
  }

  openSession(sessionId: string): void {
    this.sessionId = sessionId;
    this.transcript = [];
    this.streamBuffer = "";
    this.streaming = false;
    this.resourcePanel = null;
    this.errorBanner = null;
    this.notify();
  }

  /** Restore the transcript from GET /api/sessions/{id} (e.g. after reload). */
  hydrate(view: SessionView): void {
    this.sessionId = view.sessionId;
    this.selectedPersonaId = view.personaId;
    this.selectedPatientId = view.patientId;
    this.transcript = view.turns.map((turn) => ({
      question: turn.question,
      answer: turn.answer,
      provenance: [...turn.provenance],
      failed: false,
    }));
    this.streaming = false;
    this.streamBuffer = "";
    this.notify();
  }

  beginTurn(question: string): void {
    if (!this.canSend) throw new Error("cannot send while a stream is open");
    this.pendingQuestion = question;
    this.pendingProvenance = [];
    this.streamBuffer = "";
    this.streaming = true;
    this.errorBanner = null;
    this.notify();
  }

  applyStream(event: StreamEvent): void {
    switch (event.event) {
      case "meta":
        break;
      case "token":
        this.streamBuffer += event.data.text;
        break;
      case "provenance":
        this.pendingProvenance = [...event.data];
        break;
      case "done":
        this.transcript.push({
          question: this.pendingQuestion ?? "",
          answer: this.streamBuffer,
          provenance: this.pendingProvenance,
          failed: false,
        });
        this.resetStream();
        break;
      case "error":
        this.transcript.push({
          question: this.pendingQuestion ?? "",
          answer: this.streamBuffer,
          provenance: [],
          failed: true,
        });
        this.errorBanner = event.data.message;
        this.resetStream();
        break;
    }
    this.notify();
  }

  /** Transport failure outside the event grammar (connection dropped). */
  failStream(message: string): void {
    if (this.streaming) {
      this.transcript.push({
        question: this.pendingQuestion ?? "",
        answer: this.streamBuffer,
        provenance: [],
        failed: true,
      });
    }
    this.errorBanner = message;
    this.resetStream();
    this.notify();
  }

  private resetStream(): void {
    this.streaming = false;
    this.streamBuffer = "";
    this.pendingQuestion = null;
    this.pendingProvenance = [];
  }

  showResource(ref: string, body: unknown): void {
    this.resourcePanel = { ref, body };
    this.notify();
  }

  closeResource(): void {
    this.resourcePanel = null;
    this.notify();
  }

  showError(message: string): void {
    this.errorBanner = message;
    this.notify();
  }
}
