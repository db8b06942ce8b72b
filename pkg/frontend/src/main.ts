import { ApiError, StudioApi } from './api.js';
import { PROMPT_CHIPS } from './chips.js';
import { FinetuneMonitor } from './jobs.js';
import { fileToModelPng } from './resize.js';
import { buildStylizeRequest, SessionStore } from './session.js';
import { InterpolationController, SWEEP_ALPHAS } from './slider.js';
import type { FinetuneRequest, StylizeMode, StylizeRequest } from './types.js';

const DEFAULT_API_BASE = 'http://127.0.0.1:8000';
const API_BASE_KEY = 'mmfs-studio-api-base';

function $<T extends HTMLElement>(id: string): T {
    const el = document.getElementById(id);
    if (!el) {
        throw new Error(`missing element #${id}`);
    }
    return el as T;
}

function pngSrc(b64: string): string {
    return 'data:image/png;base64,' + b64;
}

const session = new SessionStore(window.localStorage);

let apiBase = window.localStorage.getItem(API_BASE_KEY) ?? DEFAULT_API_BASE;
let api = new StudioApi(apiBase);

// ---- header: api base, health, model picker --------------------------------

const apiBaseInput = $<HTMLInputElement>('api-base');
const healthDot = $<HTMLElement>('health-dot');
const modelPicker = $<HTMLSelectElement>('model-picker');

apiBaseInput.value = apiBase;
apiBaseInput.addEventListener('change', () => {
    apiBase = apiBaseInput.value.trim() || DEFAULT_API_BASE;
    window.localStorage.setItem(API_BASE_KEY, apiBase);
    api = new StudioApi(apiBase);
    void refreshHealth();
    void refreshModels();
});

async function refreshHealth(): Promise<void> {
    try {
        const res = await api.health();
        healthDot.textContent = res.status === 'ok' ? '● online' : '● ' + res.status;
        healthDot.className = 'health ok';
    } catch {
        healthDot.textContent = '● offline';
        healthDot.className = 'health bad';
    }
}

function setModelOptions(models: string[]): void {
    modelPicker.innerHTML = '';
    for (const id of models) {
        const opt = document.createElement('option');
        opt.value = id;
        opt.textContent = id;
        modelPicker.appendChild(opt);
    }
    const active = session.snapshot().activeModelId;
    modelPicker.value = models.includes(active) ? active : 'base';
}

async function refreshModels(): Promise<void> {
    try {
        const res = await api.listModels();
        setModelOptions(res.models);
    } catch {
        // service offline; health dot already says so
    }
}

modelPicker.addEventListener('change', () => {
    session.setActiveModelId(modelPicker.value);
});

// ---- source upload ----------------------------------------------------------

const sourceFile = $<HTMLInputElement>('source-file');
const sourcePreview = $<HTMLImageElement>('source-preview');

sourceFile.addEventListener('change', async () => {
    const file = sourceFile.files?.[0];
    if (!file) {
        return;
    }
    const b64 = await fileToModelPng(file);
    session.setSourceImage(b64);
});

// ---- stylize panel ----------------------------------------------------------

const modeSelect = $<HTMLSelectElement>('mode');
const seedInput = $<HTMLInputElement>('seed');
const promptInput = $<HTMLInputElement>('prompt');
const chipsRow = $<HTMLElement>('chips');
const refFile = $<HTMLInputElement>('ref-file');
const wplusSelect = $<HTMLSelectElement>('wplus-select');
const stylizeBtn = $<HTMLButtonElement>('stylize-btn');
const stylizeError = $<HTMLElement>('stylize-error');
const resultImg = $<HTMLImageElement>('result-img');
const reproBadge = $<HTMLElement>('repro-badge');
const pinBtn = $<HTMLButtonElement>('pin-btn');

let referenceB64: string | null = null;
let lastResult: { wplusId: string; image: string; label: string } | null = null;
// request body -> rendered bytes, to show that re-running the same request
// reproduces the exact same image
const renderCache = new Map<string, string>();

for (const prompt of PROMPT_CHIPS) {
    const chip = document.createElement('button');
    chip.type = 'button';
    chip.className = 'chip';
    chip.textContent = prompt;
    chip.addEventListener('click', () => {
        promptInput.value = prompt;
        modeSelect.value = 'text';
        session.setMode('text');
        syncModeInputs();
    });
    chipsRow.appendChild(chip);
}

function syncModeInputs(): void {
    const mode = modeSelect.value as StylizeMode;
    $<HTMLElement>('seed-row').hidden = mode !== 'random';
    $<HTMLElement>('prompt-row').hidden = mode !== 'text';
    $<HTMLElement>('ref-row').hidden = mode !== 'image';
    $<HTMLElement>('wplus-row').hidden = mode !== 'wplus';
}

modeSelect.addEventListener('change', () => {
    session.setMode(modeSelect.value as StylizeMode);
    syncModeInputs();
});

refFile.addEventListener('change', async () => {
    const file = refFile.files?.[0];
    if (file) {
        referenceB64 = await fileToModelPng(file);
    }
});

stylizeBtn.addEventListener('click', async () => {
    stylizeError.textContent = '';
    reproBadge.textContent = '';
    const state = session.snapshot();
    if (!state.sourceImage) {
        stylizeError.textContent = 'upload a source image first';
        return;
    }
    let req: StylizeRequest;
    try {
        req = buildStylizeRequest(modeSelect.value as StylizeMode, state.sourceImage, {
            seed: parseInt(seedInput.value || '0', 10),
            modelId: state.activeModelId,
            prompt: promptInput.value,
            referenceImage: referenceB64 ?? undefined,
            wplusId: wplusSelect.value || undefined,
        });
    } catch (err) {
        stylizeError.textContent = String(err instanceof Error ? err.message : err);
        return;
    }
    const key = JSON.stringify(req);
    try {
        const res = await api.stylize(req);
        resultImg.src = pngSrc(res.image);
        lastResult = { wplusId: res.wplus_id, image: res.image, label: describeRequest(req) };
        pinBtn.disabled = false;
        const cached = renderCache.get(key);
        if (cached !== undefined) {
            reproBadge.textContent =
                cached === res.image ? 'repeat render: byte-identical' : 'repeat render: DIFFERS';
        }
        renderCache.set(key, res.image);
    } catch (err) {
        // show the server's error body inline
        stylizeError.textContent = err instanceof ApiError ? err.detail : String(err);
    }
});

function describeRequest(req: StylizeRequest): string {
    switch (req.mode) {
        case 'random':
            return `random seed ${req.seed}`;
        case 'text':
            return `"${req.prompt}"`;
        case 'image':
            return 'reference image';
        case 'wplus':
            return `handle ${req.wplus_id}`;
    }
}

pinBtn.addEventListener('click', () => {
    if (lastResult) {
        session.pinStyle({
            wplusId: lastResult.wplusId,
            thumbnail: lastResult.image,
            label: lastResult.label,
        });
    }
});

// ---- pinned styles + interpolation ------------------------------------------

const pinsRow = $<HTMLElement>('pins');
const alphaSlider = $<HTMLInputElement>('alpha-slider');
const alphaValue = $<HTMLElement>('alpha-value');
const sweepBtn = $<HTMLButtonElement>('sweep-btn');
const stripRow = $<HTMLElement>('strip');
const interpMessage = $<HTMLElement>('interp-message');
const blendImg = $<HTMLImageElement>('blend-img');

const interpolation = new InterpolationController(api, {
    onFrame: (image) => {
        blendImg.src = pngSrc(image);
    },
    onStrip: (images) => {
        stripRow.innerHTML = '';
        images.forEach((image, i) => {
            const cell = document.createElement('figure');
            const img = document.createElement('img');
            img.src = pngSrc(image);
            const cap = document.createElement('figcaption');
            cap.textContent = `α=${SWEEP_ALPHAS[i]}`;
            cell.appendChild(img);
            cell.appendChild(cap);
            stripRow.appendChild(cell);
        });
    },
    onError: (message) => {
        interpMessage.textContent = message;
    },
});

function interpolationBase() {
    const state = session.snapshot();
    return {
        image: state.sourceImage ?? '',
        wplus_a: state.pins[0].wplusId,
        wplus_b: state.pins[1].wplusId,
        model_id: state.activeModelId,
    };
}

alphaSlider.addEventListener('input', () => {
    const alpha = parseFloat(alphaSlider.value);
    alphaValue.textContent = alpha.toFixed(2);
    session.setAlpha(alpha);
    if (session.canInterpolate()) {
        interpolation.setAlpha(interpolationBase(), alpha);
    }
});

sweepBtn.addEventListener('click', () => {
    if (session.canInterpolate()) {
        void interpolation.sweep(interpolationBase());
    }
});

function renderPins(): void {
    const state = session.snapshot();
    pinsRow.innerHTML = '';
    state.pins.forEach((pin, i) => {
        const cell = document.createElement('figure');
        cell.className = 'pin';
        const img = document.createElement('img');
        img.src = pngSrc(pin.thumbnail);
        img.title = pin.label;
        const cap = document.createElement('figcaption');
        cap.textContent = (i === 0 ? 'A · ' : i === 1 ? 'B · ' : '') + pin.label;
        const unpin = document.createElement('button');
        unpin.type = 'button';
        unpin.textContent = '✕';
        unpin.addEventListener('click', () => session.unpinStyle(pin.wplusId));
        cell.appendChild(img);
        cell.appendChild(cap);
        cell.appendChild(unpin);
        pinsRow.appendChild(cell);
    });

    wplusSelect.innerHTML = '';
    for (const pin of state.pins) {
        const opt = document.createElement('option');
        opt.value = pin.wplusId;
        opt.textContent = `${pin.wplusId} — ${pin.label}`;
        wplusSelect.appendChild(opt);
    }

    const ready = state.pins.length >= 2;
    alphaSlider.disabled = !ready;
    sweepBtn.disabled = !ready;
    interpMessage.textContent = ready
        ? ''
        : 'pin two styles to enable interpolation (styles A and B)';
}

// ---- fine-tune monitor -------------------------------------------------------

const ftMode = $<HTMLSelectElement>('ft-mode');
const ftPrompt = $<HTMLInputElement>('ft-prompt');
const ftRef = $<HTMLInputElement>('ft-ref');
const ftIters = $<HTMLInputElement>('ft-iters');
const ftSeed = $<HTMLInputElement>('ft-seed');
const ftSubmit = $<HTMLButtonElement>('ft-submit');
const jobStatus = $<HTMLElement>('job-status');
const ftMessage = $<HTMLElement>('ft-message');
const lossPlot = $<HTMLCanvasElement>('loss-plot');

let ftRefB64: string | null = null;

ftRef.addEventListener('change', async () => {
    const file = ftRef.files?.[0];
    if (file) {
        ftRefB64 = await fileToModelPng(file);
    }
});

ftMode.addEventListener('change', () => {
    $<HTMLElement>('ft-prompt-row').hidden = ftMode.value !== 'zero';
    $<HTMLElement>('ft-ref-row').hidden = ftMode.value !== 'one';
});

function plotTrace(trace: number[]): void {
    const ctx = lossPlot.getContext('2d');
    if (!ctx) {
        return;
    }
    const w = lossPlot.width;
    const h = lossPlot.height;
    ctx.clearRect(0, 0, w, h);
    if (trace.length < 2) {
        return;
    }
    const lo = Math.min(...trace);
    const hi = Math.max(...trace);
    const span = hi - lo || 1;
    ctx.beginPath();
    trace.forEach((v, i) => {
        const x = (i / (trace.length - 1)) * (w - 8) + 4;
        const y = h - 4 - ((v - lo) / span) * (h - 8);
        if (i === 0) {
            ctx.moveTo(x, y);
        } else {
            ctx.lineTo(x, y);
        }
    });
    ctx.strokeStyle = '#7fb4ff';
    ctx.lineWidth = 1.5;
    ctx.stroke();
}

const monitor = new FinetuneMonitor(api, {
    onUpdate: (update) => {
        if (update.job) {
            const { status, progress } = update.job;
            jobStatus.textContent =
                `${update.job.job_id} · ${status} · step ${progress.step}/${progress.total}`;
        } else {
            jobStatus.textContent = '';
        }
        ftMessage.textContent = update.message ?? '';
        plotTrace(update.trace);
    },
    onModels: (models) => setModelOptions(models),
    confirmSwap: (modelId) =>
        window.confirm(`Fine-tune complete: switch the active model to ${modelId}?`),
    onActivate: (modelId) => {
        session.setActiveModelId(modelId);
        modelPicker.value = modelId;
    },
});

ftSubmit.addEventListener('click', async () => {
    ftMessage.textContent = '';
    const req: FinetuneRequest = {
        mode: ftMode.value as FinetuneRequest['mode'],
        base_model_id: session.snapshot().activeModelId,
        iterations: parseInt(ftIters.value || '200', 10),
        seed: parseInt(ftSeed.value || '0', 10),
    };
    if (req.mode === 'zero') {
        req.prompt = ftPrompt.value;
    } else {
        if (!ftRefB64) {
            ftMessage.textContent = 'one-shot fine-tune needs a reference image';
            return;
        }
        req.reference_image = ftRefB64;
    }
    const jobId = await monitor.submit(req);
    if (jobId) {
        session.addJob(jobId);
    }
});

async function resumeLastJob(): Promise<void> {
    const ids = session.snapshot().jobIds;
    if (!ids.length) {
        return;
    }
    const last = ids[ids.length - 1];
    try {
        const job = await api.job(last);
        if (job.status === 'queued' || job.status === 'running') {
            monitor.track(last);
        }
    } catch {
        // job store is in-memory server side; a restarted server forgets jobs
    }
}

// ---- render loop -------------------------------------------------------------

function renderSession(): void {
    const state = session.snapshot();
    sourcePreview.src = state.sourceImage ? pngSrc(state.sourceImage) : '';
    sourcePreview.hidden = !state.sourceImage;
    stylizeBtn.disabled = !state.sourceImage;
    modeSelect.value = state.mode;
    alphaSlider.value = String(state.alpha);
    alphaValue.textContent = state.alpha.toFixed(2);
    renderPins();
}

session.subscribe(renderSession);
renderSession();
syncModeInputs();
$<HTMLElement>('ft-prompt-row').hidden = ftMode.value !== 'zero';
$<HTMLElement>('ft-ref-row').hidden = ftMode.value !== 'one';
pinBtn.disabled = lastResult === null;
void refreshHealth();
void refreshModels();
void resumeLastJob();
